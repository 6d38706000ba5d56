# Copyright 2026 The maskdesk Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#      http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Recomputes the mutation-sensitive fixtures used by the verify suite.

The printed numbers are frozen in src/verify.cc.
"""
import math

import torch
import torch.nn.functional as F

torch.set_default_dtype(torch.float64)

# Dice on disjoint saturated masks: logits +-30 give probabilities of 1 and 0
# up to ~1e-13.
logit = torch.tensor([30.0, 30.0, -30.0, -30.0])
target = torch.tensor([0.0, 0.0, 1.0, 1.0])
p = logit.sigmoid()
dice = 1 - (2 * (p * target).sum() + 1) / (p.sum() + target.sum() + 1)
print(f"dice_disjoint {dice.item():.12f}")

# One real query at p(true) = 0.5 and 99 no-object queries at
# p(no-object) = 0.01, K = 4.
K = 4
rows = [[math.log(0.5)] + [math.log(0.125)] * K]
rows += [[math.log(0.99 / K)] * K + [math.log(0.01)] for _ in range(99)]
logits = torch.tensor(rows)
columns = torch.tensor([0] + [K] * 99)
weight = torch.ones(K + 1)
weight[K] = 1e-4
ce = F.cross_entropy(logits, columns, weight=weight)
print(f"classification_100 {ce.item():.12f}")
