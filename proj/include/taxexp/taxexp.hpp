#pragma once

#include "taxexp/error.hpp"
#include "taxexp/eval.hpp"
#include "taxexp/features.hpp"
#include "taxexp/http_backend.hpp"
#include "taxexp/llm.hpp"
#include "taxexp/pipeline.hpp"
#include "taxexp/prompts.hpp"
#include "taxexp/ranker.hpp"
#include "taxexp/synthetic.hpp"
#include "taxexp/taxonomy.hpp"
#include "taxexp/text.hpp"
#include "taxexp/verbalizer.hpp"
