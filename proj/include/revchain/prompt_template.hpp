#pragma once

#include <map>
#include <string>
#include <string_view>

#include "revchain/error.hpp"

namespace revchain {

// Substitutes `{{Name}}` slots in a single left-to-right pass. Substituted
// values are never rescanned, so a document that happens to contain
// "{{QUERY}}" cannot inject into a later slot.
inline std::string render_template(std::string_view tmpl,
                                   const std::map<std::string, std::string, std::less<>>& slots) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, open - pos));
    const auto name = tmpl.substr(open + 2, close - open - 2);
    const auto it = slots.find(name);
    if (it == slots.end()) {
      throw Error(ErrorKind::config_error, "template slot {{" + std::string(name) + "}} has no value");
    }
    out.append(it->second);
    pos = close + 2;
  }
  return out;
}

}  // namespace revchain
