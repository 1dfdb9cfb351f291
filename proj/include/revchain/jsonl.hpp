#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "revchain/error.hpp"

namespace revchain {

// Insertion-ordered JSON keeps exported key order stable and bit-exact.
using Json = nlohmann::ordered_json;

inline std::string dump_line(const Json& j) {
  return j.dump(-1, ' ', false, nlohmann::ordered_json::error_handler_t::strict);
}

inline Json parse_json(std::string_view text, const std::string& context = "input") {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorKind::parse_error, context + ": " + e.what());
  }
}

inline std::string sha256_hex(std::string_view data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorKind::io_error, "sha256 digest failed");
  }
  std::string hex;
  hex.reserve(len * 2);
  static constexpr char kHex[] = "0123456789abcdef";
  for (unsigned int i = 0; i < len; ++i) {
    hex.push_back(kHex[digest[i] >> 4]);
    hex.push_back(kHex[digest[i] & 0x0F]);
  }
  return hex;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io_error, "cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io_error, "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw Error(ErrorKind::io_error, "short write to " + path.string());
}

inline std::vector<Json> parse_jsonl(std::string_view text, const std::string& context = "jsonl") {
  std::vector<Json> rows;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto nl = text.find('\n', pos);
    const auto line = text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    ++line_no;
    if (line.find_first_not_of(" \t\r") != std::string_view::npos) {
      rows.push_back(parse_json(line, context + ":" + std::to_string(line_no)));
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  return rows;
}

inline std::vector<Json> read_jsonl(const std::filesystem::path& path) {
  return parse_jsonl(read_file(path), path.string());
}

inline std::string to_jsonl(const std::vector<Json>& rows) {
  std::string out;
  for (const auto& row : rows) {
    out += dump_line(row);
    out.push_back('\n');
  }
  return out;
}

template <typename T>
std::vector<Json> to_json_rows(const std::vector<T>& items) {
  std::vector<Json> rows;
  rows.reserve(items.size());
  for (const auto& item : items) rows.emplace_back(item);
  return rows;
}

template <typename T>
std::vector<T> from_json_rows(const std::vector<Json>& rows) {
  std::vector<T> items;
  items.reserve(rows.size());
  for (const auto& row : rows) {
    try {
      items.push_back(row.get<T>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::schema_error, e.what());
    }
  }
  return items;
}

}  // namespace revchain
