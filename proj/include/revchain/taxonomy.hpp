#pragma once

// The like/dislike attribute taxonomy, loaded from the embedded JSON asset.
// Attributes are stored by slug; labels are display text.

#include <algorithm>
#include <cctype>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <revchain/assets.hpp>

#include "revchain/error.hpp"
#include "revchain/jsonl.hpp"

namespace revchain {

enum class Polarity { like, dislike };

NLOHMANN_JSON_SERIALIZE_ENUM(Polarity, {{Polarity::like, "like"}, {Polarity::dislike, "dislike"}})

inline constexpr std::string_view polarity_name(Polarity p) {
  return p == Polarity::like ? "like" : "dislike";
}

struct Attribute {
  std::string slug;
  std::string label;
  std::string group;
};

class AttributeTaxonomy {
 public:
  static constexpr std::size_t kLikeCount = 20;
  static constexpr std::size_t kDislikeCount = 19;

  explicit AttributeTaxonomy(const Json& j) : source_(j) {
    version_ = j.at("version").get<std::string>();
    load(j.at("like"), like_);
    load(j.at("dislike"), dislike_);
    check_unique(like_, "like");
    check_unique(dislike_, "dislike");
  }

  const std::string& version() const { return version_; }
  const std::vector<Attribute>& attributes(Polarity p) const {
    return p == Polarity::like ? like_ : dislike_;
  }

  const Attribute* find(Polarity p, std::string_view slug) const {
    const auto& list = attributes(p);
    const auto it = std::find_if(list.begin(), list.end(), [&](const Attribute& a) { return a.slug == slug; });
    return it == list.end() ? nullptr : &*it;
  }

  bool contains(Polarity p, std::string_view slug) const { return find(p, slug) != nullptr; }

  // "I like this because it states a useful fact."
  std::string reason_sentence(Polarity p, std::string_view slug) const {
    const auto* attr = find(p, slug);
    if (attr == nullptr) {
      throw Error(ErrorKind::taxonomy_error,
                  "'" + std::string(slug) + "' is not a " + std::string(polarity_name(p)) + " attribute");
    }
    std::string label = attr->label;
    const bool keep_case = label.rfind("I ", 0) == 0;
    if (!keep_case && !label.empty()) {
      label[0] = static_cast<char>(std::tolower(static_cast<unsigned char>(label[0])));
    }
    return std::string(p == Polarity::like ? "I like this because " : "I dislike this because ") + label;
  }

  const Json& to_json() const { return source_; }

 private:
  static void load(const Json& block, std::vector<Attribute>& out) {
    for (const auto& group : block.at("groups")) {
      const auto name = group.at("group").get<std::string>();
      for (const auto& a : group.at("attributes")) {
        out.push_back({a.at("slug").get<std::string>(), a.at("label").get<std::string>(), name});
      }
    }
  }

  static void check_unique(const std::vector<Attribute>& list, const char* which) {
    for (std::size_t i = 0; i < list.size(); ++i) {
      for (std::size_t k = i + 1; k < list.size(); ++k) {
        if (list[i].slug == list[k].slug || list[i].label == list[k].label) {
          throw Error(ErrorKind::taxonomy_error, std::string("duplicate ") + which + " attribute " + list[i].slug);
        }
      }
    }
  }

  Json source_;
  std::string version_;
  std::vector<Attribute> like_;
  std::vector<Attribute> dislike_;
};

inline const AttributeTaxonomy& default_taxonomy() {
  static const AttributeTaxonomy tax(Json::parse(assets::taxonomy_v1));
  return tax;
}

}  // namespace revchain
