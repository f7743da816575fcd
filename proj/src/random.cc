// Copyright 2026 The BQ-SGD Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "bqsgd/random.h"

namespace bqsgd {

CounterRng::CounterRng(const StreamKey& key) {
  // Chain the fields through the finalizer so nearby keys decorrelate.
  uint64_t h = Mix(key.seed ^ 0x6A09E667F3BCC909ULL);
  h = Mix(h ^ (key.client + 0xBB67AE8584CAA73BULL));
  h = Mix(h ^ (key.round + 0x3C6EF372FE94F82BULL));
  h = Mix(h ^ (key.index + 0xA54FF53A5F1D36F1ULL));
  state_ = h;
}

uint64_t CounterRng::UniformInt(uint64_t bound) {
  const uint64_t limit = max() - max() % bound;
  uint64_t x;
  do {
    x = (*this)();
  } while (x >= limit);
  return x % bound;
}

}  // namespace bqsgd
