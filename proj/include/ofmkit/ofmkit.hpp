#pragma once

#include "ofmkit/error.hpp"
#include "ofmkit/parallel.hpp"
#include "ofmkit/image.hpp"
#include "ofmkit/io.hpp"
#include "ofmkit/scene.hpp"
#include "ofmkit/flow.hpp"
#include "ofmkit/graph.hpp"
#include "ofmkit/manifold.hpp"
#include "ofmkit/curve.hpp"
#include "ofmkit/articulation.hpp"
