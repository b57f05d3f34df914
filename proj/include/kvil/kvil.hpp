#pragma once

#include "clustering.hpp"
#include "constraint.hpp"
#include "demo.hpp"
#include "demo_io.hpp"
#include "errors.hpp"
#include "geometry.hpp"
#include "kac.hpp"
#include "manifold.hpp"
#include "parallel.hpp"
#include "pce_cluster.hpp"
#include "pce_linear.hpp"
#include "pme.hpp"
#include "sim.hpp"
#include "spline.hpp"
#include "synth.hpp"
#include "task.hpp"
#include "task_io.hpp"
#include "vmp.hpp"
