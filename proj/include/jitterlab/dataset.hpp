#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "jitterlab/errors.hpp"
#include "jitterlab/geometry.hpp"
#include "jitterlab/image.hpp"

namespace jitterlab {

enum class Domain { source, target };

inline const char* to_string(Domain d) { return d == Domain::source ? "source" : "target"; }

inline Domain parse_domain(const std::string& s) {
  if (s == "source") return Domain::source;
  if (s == "target") return Domain::target;
  throw ConfigError("unknown domain '" + s + "' (expected source|target)");
}

inline constexpr std::int64_t kNoGroup = -1;

// Struct-of-arrays sample collection; all columns have equal length.
struct Dataset {
  std::vector<Image> images;
  std::vector<GazeLabel> labels;
  std::vector<Domain> domains;
  std::vector<std::int64_t> group_ids;
  std::vector<std::uint64_t> seeds;

  std::size_t size() const { return images.size(); }
  bool empty() const { return images.empty(); }

  void push_back(Image img, GazeLabel label, Domain domain, std::int64_t group, std::uint64_t seed) {
    images.push_back(std::move(img));
    labels.push_back(label);
    domains.push_back(domain);
    group_ids.push_back(group);
    seeds.push_back(seed);
  }

  // Rows [begin, end).
  Dataset slice(std::size_t begin, std::size_t end) const {
    if (begin > end || end > size()) throw ShapeError("dataset slice out of range");
    Dataset d;
    for (std::size_t i = begin; i < end; ++i) d.push_back(images[i], labels[i], domains[i], group_ids[i], seeds[i]);
    return d;
  }

  // Same rows with every image replaced.
  Dataset with_images(std::vector<Image> replaced) const {
    if (replaced.size() != size()) throw ShapeError("replacement image count differs from dataset size");
    Dataset d = *this;
    d.images = std::move(replaced);
    return d;
  }
};

}  // namespace jitterlab
