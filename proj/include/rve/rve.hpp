#pragma once

// Umbrella header for the retrieval-vision engine.

#include "rve/backend.hpp"
#include "rve/crc32.hpp"
#include "rve/embedding.hpp"
#include "rve/embedding_io.hpp"
#include "rve/entity_store.hpp"
#include "rve/errors.hpp"
#include "rve/eval.hpp"
#include "rve/hnsw.hpp"
#include "rve/hnsw_io.hpp"
#include "rve/pipeline.hpp"
#include "rve/rng.hpp"
#include "rve/text.hpp"
#include "rve/token_refine.hpp"
#include "rve/training.hpp"
