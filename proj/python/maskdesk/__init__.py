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

"""Python access to the maskdesk core: matcher, losses, model, records, evaluator."""

from maskdesk._maskdesk import (
    ConfigError,
    ContractError,
    Error,
    InputError,
    Model,
    RecordError,
    ShapeError,
    TargetOverflowError,
    UnknownClassError,
    brute_force_match,
    classification_loss,
    config_keys,
    decode_payload,
    default_config,
    dice_loss,
    encode_payload,
    focal_loss,
    hungarian,
    load_config,
    panoptic_quality,
    read_shards,
    sine_position_embedding,
    square_pad,
    verify,
    write_shards,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "Error",
    "InputError",
    "Model",
    "RecordError",
    "ShapeError",
    "TargetOverflowError",
    "UnknownClassError",
    "brute_force_match",
    "classification_loss",
    "config_keys",
    "decode_payload",
    "default_config",
    "dice_loss",
    "encode_payload",
    "focal_loss",
    "hungarian",
    "load_config",
    "panoptic_quality",
    "read_shards",
    "sine_position_embedding",
    "square_pad",
    "verify",
    "write_shards",
]
