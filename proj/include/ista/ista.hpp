#pragma once

#include "ista/binary_io.hpp"
#include "ista/codebook.hpp"
#include "ista/config.hpp"
#include "ista/descriptor_store.hpp"
#include "ista/error.hpp"
#include "ista/linalg.hpp"
#include "ista/normalizer.hpp"
#include "ista/oracle.hpp"
#include "ista/parallel.hpp"
#include "ista/pipeline.hpp"
#include "ista/reducer.hpp"
#include "ista/retrieval.hpp"
#include "ista/rng.hpp"
#include "ista/sta_encoder.hpp"
