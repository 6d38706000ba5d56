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

import numpy as np
import pytest

md = pytest.importorskip("maskdesk")


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def ref_dice(z, gt, valid, eps=1.0):
    p = sigmoid(z) * valid
    g = gt * valid
    num = 2 * (p * g).sum(axis=(1, 2)) + eps
    den = p.sum(axis=(1, 2)) + g.sum(axis=(1, 2)) + eps
    return float(np.mean(1 - num / den))


def ref_focal(z, gt, valid, alpha=0.25, gamma=2.0):
    p = np.clip(sigmoid(z), 1e-7, 1 - 1e-7)
    pt = np.where(gt == 1, p, 1 - p)
    at = np.where(gt == 1, alpha, 1 - alpha)
    per_pixel = -at * (1 - pt) ** gamma * np.log(pt)
    return float(np.mean([(per_pixel[i] * valid).sum() / valid.sum() for i in range(len(z))]))


def ref_classification(logits, labels, no_object):
    k1 = logits.shape[1]
    shifted = logits - logits.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    w = np.array([no_object if l == k1 else 1.0 for l in labels])
    nll = np.array([-logp[i, l - 1] for i, l in enumerate(labels)])
    return float((w * nll).sum() / w.sum())


def random_case(rng, p=3, h=5, w=6):
    z = rng.uniform(-4, 4, size=(p, h, w))
    gt = rng.integers(0, 2, size=(p, h, w)).astype(np.uint8)
    valid = (rng.uniform(size=(h, w)) < 0.8).astype(np.uint8)
    valid[0, 0] = 1
    return z, gt, valid


def test_mask_losses_match_numpy(rng):
    for _ in range(20):
        z, gt, valid = random_case(rng)
        assert md.dice_loss(z, gt, valid)[0] == pytest.approx(ref_dice(z, gt, valid), abs=1e-12)
        assert md.dice_loss(z, gt, valid, 3.0)[0] == pytest.approx(
            ref_dice(z, gt, valid, 3.0), abs=1e-12)
        assert md.focal_loss(z, gt, valid)[0] == pytest.approx(ref_focal(z, gt, valid), abs=1e-12)


def test_classification_matches_numpy(rng):
    for _ in range(20):
        logits = rng.normal(size=(7, 5))
        labels = [int(v) for v in rng.integers(1, 6, size=7)]
        got = md.classification_loss(logits, labels, 0.1)[0]
        assert got == pytest.approx(ref_classification(logits, labels, 0.1), abs=1e-12)


def test_gradients_match_central_differences(rng):
    z, gt, valid = random_case(rng, p=2, h=3, w=4)
    for fn in (lambda x: md.dice_loss(x, gt, valid), lambda x: md.focal_loss(x, gt, valid)):
        _, grad = fn(z)
        numeric = np.zeros_like(z)
        for idx in np.ndindex(z.shape):
            plus, minus = z.copy(), z.copy()
            plus[idx] += 1e-6
            minus[idx] -= 1e-6
            numeric[idx] = (fn(plus)[0] - fn(minus)[0]) / 2e-6
        err = np.linalg.norm(grad - numeric) / max(np.linalg.norm(grad), np.linalg.norm(numeric))
        assert err < 1e-6


def test_padding_is_ignored(rng):
    z, gt, valid = random_case(rng)
    extra = 4
    zp = np.concatenate([z, rng.uniform(-9, 9, size=(3, 5, extra))], axis=2)
    gp = np.concatenate([gt, rng.integers(0, 2, size=(3, 5, extra)).astype(np.uint8)], axis=2)
    vp = np.concatenate([valid, np.zeros((5, extra), np.uint8)], axis=1)
    assert abs(md.dice_loss(zp, gp, vp)[0] - md.dice_loss(z, gt, valid)[0]) <= 1e-7
    assert abs(md.focal_loss(zp, gp, vp)[0] - md.focal_loss(z, gt, valid)[0]) <= 1e-7


def test_bad_labels_raise():
    with pytest.raises(md.ContractError):
        md.classification_loss(np.zeros((2, 3)), [0, 1])
