#pragma once

// A small TOML subset: [section] headers, key = value lines, '#' comments.
// Values are strings ("basic" or 'literal'), integers, floats, booleans, or
// single-line arrays of those. Keys are flattened to "section.key".

#include <cctype>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "revchain/error.hpp"
#include "revchain/jsonl.hpp"

namespace revchain {

class Config {
 public:
  Config() = default;

  static Config parse(std::string_view text) {
    Config c;
    std::string section;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto nl = text.find('\n', pos);
      auto line = text.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
      pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
      ++line_no;
      Cursor cur{line, 0, line_no};
      cur.skip_space();
      if (cur.done() || cur.peek() == '#') continue;
      if (cur.peek() == '[') {
        ++cur.i;
        const auto close = line.find(']', cur.i);
        if (close == std::string_view::npos) cur.fail("unterminated section header");
        section = trim(line.substr(cur.i, close - cur.i));
        if (section.empty()) cur.fail("empty section name");
        cur.i = close + 1;
        cur.expect_end();
        continue;
      }
      const auto eq = line.find('=', cur.i);
      if (eq == std::string_view::npos) cur.fail("expected key = value");
      const auto key = trim(line.substr(cur.i, eq - cur.i));
      if (key.empty()) cur.fail("empty key");
      cur.i = eq + 1;
      Json value = cur.value();
      cur.expect_end();
      const auto full = section.empty() ? key : section + "." + key;
      if (c.values_.count(full)) cur.fail("duplicate key '" + full + "'");
      c.values_[full] = std::move(value);
    }
    return c;
  }

  static Config load(const std::filesystem::path& path) { return parse(read_file(path)); }

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  void set(const std::string& key, Json v) { values_[key] = std::move(v); }

  template <typename T>
  T get(const std::string& key, T fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return it->second.get<T>();
    } catch (const Json::exception&) {
      throw Error(ErrorKind::config_error, "config key '" + key + "' has the wrong type");
    }
  }

  template <typename T>
  T require(const std::string& key) const {
    if (!has(key)) throw Error(ErrorKind::config_error, "missing config key '" + key + "'");
    return get<T>(key, T{});
  }

  const std::map<std::string, Json>& values() const { return values_; }

 private:
  static std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
  }

  struct Cursor {
    std::string_view s;
    std::size_t i;
    std::size_t line;

    bool done() const { return i >= s.size(); }
    char peek() const { return s[i]; }
    void skip_space() {
      while (!done() && (s[i] == ' ' || s[i] == '\t' || s[i] == '\r')) ++i;
    }
    [[noreturn]] void fail(const std::string& msg) const {
      throw Error(ErrorKind::config_error, "config line " + std::to_string(line) + ": " + msg);
    }
    void expect_end() {
      skip_space();
      if (!done() && peek() != '#') fail("unexpected trailing text");
    }

    Json value() {
      skip_space();
      if (done()) fail("missing value");
      const char c = peek();
      if (c == '"') return basic_string();
      if (c == '\'') {
        const auto close = s.find('\'', i + 1);
        if (close == std::string_view::npos) fail("unterminated string");
        std::string out(s.substr(i + 1, close - i - 1));
        i = close + 1;
        return out;
      }
      if (c == '[') {
        ++i;
        Json arr = Json::array();
        while (true) {
          skip_space();
          if (done()) fail("unterminated array");
          if (peek() == ']') {
            ++i;
            return arr;
          }
          arr.push_back(value());
          skip_space();
          if (!done() && peek() == ',') ++i;
        }
      }
      std::size_t e = i;
      while (e < s.size() && s[e] != ',' && s[e] != ']' && s[e] != '#' && s[e] != ' ' && s[e] != '\t' &&
             s[e] != '\r') {
        ++e;
      }
      std::string tok(s.substr(i, e - i));
      i = e;
      if (tok == "true") return true;
      if (tok == "false") return false;
      std::string digits;
      for (char ch : tok) {
        if (ch != '_') digits.push_back(ch);
      }
      try {
        std::size_t used = 0;
        if (digits.find_first_of(".eE") == std::string::npos) {
          const long long v = std::stoll(digits, &used);
          if (used == digits.size()) return v;
        } else {
          const double v = std::stod(digits, &used);
          if (used == digits.size()) return v;
        }
      } catch (const std::exception&) {
      }
      fail("cannot parse value '" + tok + "'");
    }

    Json basic_string() {
      ++i;
      std::string out;
      while (true) {
        if (done()) fail("unterminated string");
        const char c = s[i++];
        if (c == '"') return out;
        if (c != '\\') {
          out.push_back(c);
          continue;
        }
        if (done()) fail("dangling escape");
        const char e = s[i++];
        switch (e) {
          case 'n': out.push_back('\n'); break;
          case 't': out.push_back('\t'); break;
          case 'r': out.push_back('\r'); break;
          case '"': out.push_back('"'); break;
          case '\\': out.push_back('\\'); break;
          default: fail(std::string("unsupported escape \\") + e);
        }
      }
    }
  };

  std::map<std::string, Json> values_;
};

}  // namespace revchain
