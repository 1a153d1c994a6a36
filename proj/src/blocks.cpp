#include "setcomp/blocks.hpp"

namespace setcomp {

std::string to_string(GVariant v) {
  switch (v) {
    case GVariant::kMean: return "Mean";
    case GVariant::kLin: return "Lin";
    case GVariant::kLinFC: return "LinFC";
    case GVariant::kDNN: return "DNN";
  }
  return "?";
}

std::string to_string(HVariant v) {
  switch (v) {
    case HVariant::kLin: return "Lin";
    case HVariant::kLinFC: return "LinFC";
    case HVariant::kDNN: return "DNN";
  }
  return "?";
}

std::string to_string(Backbone b) { return b == Backbone::kSmallCnn ? "small_cnn" : "resnet18_1ch"; }

GVariant parse_g_variant(const std::string& s) {
  if (s == "Mean") return GVariant::kMean;
  if (s == "Lin") return GVariant::kLin;
  if (s == "LinFC" || s == "Lin+FC") return GVariant::kLinFC;
  if (s == "DNN") return GVariant::kDNN;
  throw std::invalid_argument("unknown g variant '" + s + "'");
}

HVariant parse_h_variant(const std::string& s) {
  if (s == "Lin") return HVariant::kLin;
  if (s == "LinFC" || s == "Lin+FC") return HVariant::kLinFC;
  if (s == "DNN") return HVariant::kDNN;
  throw std::invalid_argument("unknown h variant '" + s + "'");
}

Backbone parse_backbone(const std::string& s) {
  if (s == "small_cnn") return Backbone::kSmallCnn;
  if (s == "resnet18_1ch" || s == "resnet18") return Backbone::kResNet18;
  throw std::invalid_argument("unknown backbone '" + s + "'");
}

}  // namespace setcomp
