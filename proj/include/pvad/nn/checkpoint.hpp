// Copyright 2026  pvad-lab authors

// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Checkpoint files: one JSON header line (names, shapes, dtype, step,
// metadata) followed by the concatenated little-endian tensor blobs in
// header order, each in column-major order.

#pragma once

#include <fstream>
#include <sstream>
#include <string>
#include <type_traits>

#include <nlohmann/json.hpp>

#include "pvad/nn/params.hpp"

namespace pvad::nn {

template <typename S>
constexpr const char* DtypeName() {
  if constexpr (std::is_same_v<S, float>)
    return "f32";
  else
    return "f64";
}

struct CheckpointInfo {
  long step = 0;
  nlohmann::json metadata = nlohmann::json::object();
};

template <typename S>
std::string SerializeCheckpoint(const ParamStore<S>& ps,
                                const CheckpointInfo& info) {
  nlohmann::json header;
  header["format"] = "pvad-checkpoint-1";
  header["dtype"] = DtypeName<S>();
  header["step"] = info.step;
  header["metadata"] = info.metadata;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [name, p] : ps)
    entries.push_back({{"name", name},
                       {"rows", p.value.rows()},
                       {"cols", p.value.cols()},
                       {"trainable", p.trainable}});
  header["params"] = entries;
  std::string out = header.dump() + "\n";
  for (const auto& [_, p] : ps)
    out.append(reinterpret_cast<const char*>(p.value.data()),
               sizeof(S) * std::size_t(p.value.size()));
  return out;
}

template <typename S>
void SaveCheckpoint(const std::string& path, const ParamStore<S>& ps,
                    const CheckpointInfo& info = {}) {
  const std::string bytes = SerializeCheckpoint(ps, info);
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write checkpoint " + path);
  f.write(bytes.data(), std::streamsize(bytes.size()));
  if (!f) throw DataError("failed writing checkpoint " + path);
}

template <typename S>
ParamStore<S> LoadCheckpoint(const std::string& path,
                             CheckpointInfo* info = nullptr) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path);
  std::string line;
  std::getline(f, line);
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header in " + path + ": " + e.what());
  }
  if (header.value("format", "") != "pvad-checkpoint-1")
    throw DataError("unknown checkpoint format in " + path);
  if (header.at("dtype") != DtypeName<S>())
    throw DataError("checkpoint " + path + " has dtype " +
                    header.at("dtype").get<std::string>());
  ParamStore<S> ps;
  for (const auto& e : header.at("params")) {
    Param<S>& p = ps.Add(e.at("name"), e.at("rows"), e.at("cols"),
                         e.at("trainable"));
    f.read(reinterpret_cast<char*>(p.value.data()),
           std::streamsize(sizeof(S) * std::size_t(p.value.size())));
    if (!f) throw DataError("truncated checkpoint " + path);
  }
  if (info) {
    info->step = header.at("step");
    info->metadata = header.at("metadata");
  }
  return ps;
}

}  // namespace pvad::nn
