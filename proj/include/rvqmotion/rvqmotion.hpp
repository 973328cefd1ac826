// Copyright 2026 The rvqmotion Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//       http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Everything except the command-line plumbing.

#include "rvqmotion/ar/model.hpp"
#include "rvqmotion/ar/train.hpp"
#include "rvqmotion/codec/codec.hpp"
#include "rvqmotion/codec/rvq.hpp"
#include "rvqmotion/core/adam.hpp"
#include "rvqmotion/core/checkpoint.hpp"
#include "rvqmotion/core/layers.hpp"
#include "rvqmotion/data/sequence.hpp"
#include "rvqmotion/data/synthetic.hpp"
#include "rvqmotion/metrics/evaluate.hpp"
#include "rvqmotion/metrics/frechet.hpp"
#include "rvqmotion/metrics/lip_error.hpp"
#include "rvqmotion/metrics/style.hpp"
#include "rvqmotion/metrics/syncnet.hpp"
#include "rvqmotion/sampling/aggregate.hpp"
#include "rvqmotion/sampling/distill.hpp"
#include "rvqmotion/sampling/generate.hpp"
