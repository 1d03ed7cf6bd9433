#pragma once

#include "hem/error.hpp"
#include "hem/linalg.hpp"
#include "hem/mesh.hpp"
#include "hem/assembly.hpp"
#include "hem/partition.hpp"
#include "hem/parallel.hpp"
#include "hem/coarse.hpp"
#include "hem/schwarz.hpp"
#include "hem/experiment.hpp"
