// Copyright 2026 The maskdesk Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Synthetic shape scenes and ingestion of panoptic annotations into shards.
//
// On-disk layout of a raw dataset directory:
//   categories.json    [{"id": 3, "name": "circle", "isthing": 1}, ...]
//   annotations.jsonl  one object per image:
//                      {"image_id", "file_name", "height", "width",
//                       "segments_info": [{"id", "category_id"}],
//                       "segmentation": [value, run, value, run, ...]}
//   images/*.ppm       binary P6, 8-bit RGB
//
// "segmentation" run-length encodes the segment-id map in raster order.
// Segment id 0 marks unlabeled pixels.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "maskdesk/grid.h"
#include "maskdesk/pipeline.h"
#include "maskdesk/records.h"

namespace maskdesk::dataset {

struct Category {
  std::int64_t id = 0;
  std::string name;
  bool isthing = true;
};

// circle, rectangle, triangle (things) and a background band (stuff), with
// deliberately sparse ids.
const std::vector<Category>& synth_categories();

struct SynthSummary {
  std::int64_t images = 0;
  std::vector<std::int64_t> segments_per_category;  // aligned with synth_categories()
};

// Writes n images with their annotations under out_dir. Output bytes depend
// only on (n, seed).
SynthSummary synth(std::int64_t n, const std::filesystem::path& out_dir, std::uint64_t seed);

std::vector<Category> read_categories(const std::filesystem::path& path);

void write_ppm(const std::filesystem::path& path, std::int64_t height, std::int64_t width,
               const std::vector<std::uint8_t>& rgb);
// Throws InputError on anything but 8-bit binary P6.
std::vector<std::uint8_t> read_ppm(const std::filesystem::path& path, std::int64_t& height,
                                   std::int64_t& width);

std::vector<std::int64_t> rle_encode(const LabelGrid& g);
// Throws InputError when the runs do not cover height*width exactly.
LabelGrid rle_decode(const std::vector<std::int64_t>& counts, std::int64_t height,
                     std::int64_t width);

struct Annotation {
  std::int64_t image_id = 0;
  std::string file_name;
  std::int64_t height = 0;
  std::int64_t width = 0;
  LabelGrid segment_ids;
  std::vector<std::pair<std::int64_t, std::int64_t>> segments;  // (segment id, category id)
};

std::vector<Annotation> read_annotations(const std::filesystem::path& jsonl);

// Contiguous class mask plus instance ids 1..n in segments_info order.
// Unknown categories throw UnknownClassError; unlisted segment ids in the
// map throw InputError.
pipeline::RawSample to_raw_sample(const Annotation& ann, const std::vector<std::uint8_t>& rgb,
                                  const pipeline::IdMapper& mapper);

struct IngestSummary {
  records::ShardSet shards;
  std::int64_t segments = 0;
};

// Reads raw_dir (categories.json, annotations.jsonl, images) and writes
// shard_count shards plus a manifest carrying the class table.
IngestSummary ingest(const std::filesystem::path& raw_dir, std::size_t shard_count,
                     const std::filesystem::path& out_dir);

}  // namespace maskdesk::dataset
