// Copyright 2026 The circuitscope Authors
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

#include <zlib.h>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "circuitscope/tensor.hpp"

namespace circuitscope {

// ---------------------------------------------------------------------------
// DTRC trace file format, version 1 (all integers and floats little-endian)
//
//   header (32 bytes):
//     magic "DTRC" | u16 version | u8 endian(=1) | u8 reserved(=0)
//     u64 global_seed | u64 config_digest | u64 index_offset
//   records, back to back:
//     u16 name_len | name bytes | u8 kind | u32 timestep | u16 head
//     u32 batch_index | u8 rank | u32 dims[rank] | f32 payload[] | u32 crc32
//   index (at index_offset):
//     u64 count | u64 absolute_record_offsets[count]   (strictly increasing)
//
// The crc32 covers the record bytes from name_len through the payload.
// ---------------------------------------------------------------------------

enum class TraceKind : uint8_t { activation = 0, attention = 1, image = 2, scalar = 3 };

inline const char* trace_kind_name(TraceKind k) {
  switch (k) {
    case TraceKind::activation: return "activation";
    case TraceKind::attention: return "attention";
    case TraceKind::image: return "image";
    case TraceKind::scalar: return "scalar";
  }
  return "?";
}

constexpr uint16_t kNoHead = 0xFFFF;  // sentinel: record not head-specific
constexpr uint16_t kTraceVersion = 1;
constexpr size_t kTraceHeaderBytes = 32;

struct TraceRecord {
  std::string name;
  TraceKind kind = TraceKind::activation;
  uint32_t timestep = 0;
  uint16_t head = kNoHead;
  uint32_t batch_index = 0;
  Shape shape;
  std::vector<float> payload;

  bool operator==(const TraceRecord& o) const {
    return name == o.name && kind == o.kind && timestep == o.timestep && head == o.head &&
           batch_index == o.batch_index && shape == o.shape && payload == o.payload;
  }
};

// Serialized byte size of one record, from the format constants.
inline size_t trace_record_bytes(const TraceRecord& r) {
  return 2 + r.name.size() + 1 + 4 + 2 + 4 + 1 + 4 * r.shape.size() + 4 * r.payload.size() + 4;
}

struct TraceError : std::runtime_error {
  enum Kind { bad_magic, unsupported_version, truncated, index_mismatch, checksum_mismatch, io };
  Kind kind;
  TraceError(Kind k, const std::string& msg) : std::runtime_error(msg), kind(k) {}
};

struct TraceHeader {
  uint64_t global_seed = 0;
  uint64_t config_digest = 0;
};

namespace detail {

inline void put_bytes(std::string& buf, const void* p, size_t n) {
  buf.append(static_cast<const char*>(p), n);
}
template <class T>
void put(std::string& buf, T v) {
  put_bytes(buf, &v, sizeof(v));  // host is little-endian; asserted on read
}

struct Cursor {
  const char* p;
  const char* end;
  template <class T>
  T get() {
    if (p + sizeof(T) > end) {
      throw TraceError(TraceError::truncated, "trace file truncated mid-record");
    }
    T v;
    std::memcpy(&v, p, sizeof(T));
    p += sizeof(T);
    return v;
  }
  void get_raw(void* dst, size_t n) {
    if (p + n > end) {
      throw TraceError(TraceError::truncated, "trace file truncated mid-payload");
    }
    std::memcpy(dst, p, n);
    p += n;
  }
};

inline std::string encode_record(const TraceRecord& r) {
  if (numel(r.shape) != static_cast<int64_t>(r.payload.size())) {
    throw std::invalid_argument("trace record '" + r.name + "': payload length " +
                                std::to_string(r.payload.size()) + " does not match shape " +
                                shape_str(r.shape));
  }
  std::string buf;
  put<uint16_t>(buf, static_cast<uint16_t>(r.name.size()));
  put_bytes(buf, r.name.data(), r.name.size());
  put<uint8_t>(buf, static_cast<uint8_t>(r.kind));
  put<uint32_t>(buf, r.timestep);
  put<uint16_t>(buf, r.head);
  put<uint32_t>(buf, r.batch_index);
  put<uint8_t>(buf, static_cast<uint8_t>(r.shape.size()));
  for (int d : r.shape) put<uint32_t>(buf, static_cast<uint32_t>(d));
  put_bytes(buf, r.payload.data(), 4 * r.payload.size());
  uint32_t crc = static_cast<uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(buf.size())));
  put<uint32_t>(buf, crc);
  return buf;
}

}  // namespace detail

// Validates attention row normalization; write_trace requires valid records.
inline bool attention_rows_normalized(const TraceRecord& r, double tol = 1e-5) {
  if (r.shape.empty()) return false;
  int k = r.shape.back();
  if (k <= 0) return false;
  int64_t rows = static_cast<int64_t>(r.payload.size()) / k;
  for (int64_t row = 0; row < rows; ++row) {
    double sum = 0;
    for (int j = 0; j < k; ++j) sum += r.payload[row * k + j];
    if (std::abs(sum - 1.0) > tol) return false;
  }
  return true;
}

inline uint64_t write_trace(const std::vector<TraceRecord>& records, const std::string& path,
                            TraceHeader header = {}) {
  for (const auto& r : records) {
    if (r.kind == TraceKind::attention && !attention_rows_normalized(r)) {
      throw std::invalid_argument("trace record '" + r.name +
                                  "': attention rows are not normalized");
    }
  }
  std::string body;
  std::vector<uint64_t> offsets;
  offsets.reserve(records.size());
  for (const auto& r : records) {
    offsets.push_back(kTraceHeaderBytes + body.size());
    body += detail::encode_record(r);
  }
  uint64_t index_offset = kTraceHeaderBytes + body.size();

  std::string head;
  detail::put_bytes(head, "DTRC", 4);
  detail::put<uint16_t>(head, kTraceVersion);
  detail::put<uint8_t>(head, 1);  // little-endian payloads
  detail::put<uint8_t>(head, 0);
  detail::put<uint64_t>(head, header.global_seed);
  detail::put<uint64_t>(head, header.config_digest);
  detail::put<uint64_t>(head, index_offset);

  std::string index;
  detail::put<uint64_t>(index, offsets.size());
  for (uint64_t off : offsets) detail::put<uint64_t>(index, off);

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw TraceError(TraceError::io, "cannot open for writing: " + path);
  out.write(head.data(), static_cast<std::streamsize>(head.size()));
  out.write(body.data(), static_cast<std::streamsize>(body.size()));
  out.write(index.data(), static_cast<std::streamsize>(index.size()));
  if (!out) throw TraceError(TraceError::io, "write failed: " + path);
  return head.size() + body.size() + index.size();
}

inline std::vector<TraceRecord> read_trace(const std::string& path, TraceHeader* header_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TraceError(TraceError::io, "cannot open: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  if (bytes.size() < kTraceHeaderBytes) {
    throw TraceError(TraceError::truncated, "file shorter than header: " + path);
  }
  if (std::memcmp(bytes.data(), "DTRC", 4) != 0) {
    throw TraceError(TraceError::bad_magic, "bad magic, not a DTRC trace: " + path);
  }
  detail::Cursor cur{bytes.data() + 4, bytes.data() + bytes.size()};
  uint16_t version = cur.get<uint16_t>();
  if (version != kTraceVersion) {
    throw TraceError(TraceError::unsupported_version,
                     "unsupported trace version " + std::to_string(version) + " (reader supports " +
                         std::to_string(kTraceVersion) + ")");
  }
  uint8_t endian = cur.get<uint8_t>();
  if (endian != 1) {
    throw TraceError(TraceError::unsupported_version, "unsupported endianness flag");
  }
  cur.get<uint8_t>();
  TraceHeader hdr;
  hdr.global_seed = cur.get<uint64_t>();
  hdr.config_digest = cur.get<uint64_t>();
  uint64_t index_offset = cur.get<uint64_t>();
  if (index_offset > bytes.size() || index_offset < kTraceHeaderBytes) {
    throw TraceError(TraceError::truncated, "index offset outside file");
  }

  detail::Cursor icur{bytes.data() + index_offset, bytes.data() + bytes.size()};
  uint64_t count = icur.get<uint64_t>();
  std::vector<uint64_t> offsets(count);
  for (auto& off : offsets) off = icur.get<uint64_t>();
  uint64_t prev = 0;
  for (uint64_t off : offsets) {
    if (off <= prev || off >= index_offset) {
      throw TraceError(TraceError::index_mismatch, "index offsets not strictly increasing");
    }
    prev = off;
  }

  std::vector<TraceRecord> records;
  records.reserve(count);
  uint64_t pos = kTraceHeaderBytes;
  for (uint64_t i = 0; i < count; ++i) {
    if (offsets[i] != pos) {
      throw TraceError(TraceError::index_mismatch,
                       "record " + std::to_string(i) + " does not start at indexed offset");
    }
    detail::Cursor c{bytes.data() + pos, bytes.data() + index_offset};
    const char* rec_start = c.p;
    TraceRecord r;
    uint16_t name_len = c.get<uint16_t>();
    r.name.resize(name_len);
    c.get_raw(r.name.data(), name_len);
    r.kind = static_cast<TraceKind>(c.get<uint8_t>());
    r.timestep = c.get<uint32_t>();
    r.head = c.get<uint16_t>();
    r.batch_index = c.get<uint32_t>();
    uint8_t rank = c.get<uint8_t>();
    r.shape.resize(rank);
    int64_t n = 1;
    for (int d = 0; d < rank; ++d) {
      r.shape[d] = static_cast<int>(c.get<uint32_t>());
      n *= r.shape[d];
    }
    r.payload.resize(static_cast<size_t>(n));
    c.get_raw(r.payload.data(), 4 * static_cast<size_t>(n));
    size_t covered = static_cast<size_t>(c.p - rec_start);
    uint32_t stored_crc = c.get<uint32_t>();
    uint32_t crc = static_cast<uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(rec_start), static_cast<uInt>(covered)));
    if (crc != stored_crc) {
      throw TraceError(TraceError::checksum_mismatch,
                       "checksum mismatch in record '" + r.name + "' (#" + std::to_string(i) + ")");
    }
    pos += covered + 4;
    records.push_back(std::move(r));
  }
  if (pos != index_offset) {
    throw TraceError(TraceError::index_mismatch, "records do not end at the index");
  }
  if (header_out) *header_out = hdr;
  return records;
}

// Record filter; unset fields match everything.
struct TraceFilter {
  std::optional<std::string> name;
  std::optional<TraceKind> kind;
  std::optional<uint32_t> timestep;
  std::optional<uint16_t> head;

  bool matches(const TraceRecord& r) const {
    if (name && r.name != *name) return false;
    if (kind && r.kind != *kind) return false;
    if (timestep && r.timestep != *timestep) return false;
    if (head && r.head != *head) return false;
    return true;
  }
};

inline std::vector<TraceRecord> query(const std::vector<TraceRecord>& records,
                                      const TraceFilter& filter) {
  std::vector<TraceRecord> out;
  for (const auto& r : records) {
    if (filter.matches(r)) out.push_back(r);
  }
  return out;
}

}  // namespace circuitscope
