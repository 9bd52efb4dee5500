#include "wsc/types.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "wsc/errors.hpp"

namespace wsc {

const char* concept_name(Concept c) {
  return c == Concept::subject ? "subject" : "action";
}

void ConceptSpace::validate() const {
  for (std::size_t e = 0; e < kNumConcepts; ++e) {
    if (feature_dims[e] == 0) {
      throw ValidationError(std::string("feature dimension for ") +
                            concept_name(static_cast<Concept>(e)) + " must be >= 1");
    }
  }
}

std::size_t Dataset::total_tracks() const {
  std::size_t n = 0;
  for (const auto& v : videos) n += v.tracks.size();
  return n;
}

std::vector<LabelTuple> dedup_labels(const std::vector<LabelTuple>& labels) {
  std::vector<LabelTuple> out;
  out.reserve(labels.size());
  for (const auto& l : labels) {
    if (std::find(out.begin(), out.end(), l) == out.end()) out.push_back(l);
  }
  return out;
}

namespace {

void check_features(const Eigen::VectorXd& f, std::size_t expected, const char* name,
                    const VideoBag& bag, std::size_t track) {
  if (static_cast<std::size_t>(f.size()) != expected) {
    std::ostringstream os;
    os << name << " length " << f.size() << " ≠ " << expected << " at video " << bag.id
       << " track " << track;
    throw ValidationError(os.str());
  }
  if (!f.allFinite()) {
    std::ostringstream os;
    os << name << " has a non-finite entry at video " << bag.id << " track " << track;
    throw ValidationError(os.str());
  }
}

}  // namespace

void validate_bag(const VideoBag& bag, const ConceptSpace& space) {
  if (bag.tracks.empty()) {
    throw ValidationError("video " + bag.id + " has no tracks");
  }
  for (std::size_t l = 0; l < bag.labels.size(); ++l) {
    const auto& t = bag.labels[l];
    std::ostringstream os;
    if (!t.subject && !t.action) {
      os << "label " << l << " of video " << bag.id << " is (null, null)";
      throw ValidationError(os.str());
    }
    if (t.subject && *t.subject >= space.num_subjects) {
      os << "subject index " << *t.subject << " out of range [0, " << space.num_subjects
         << ") in label " << l << " of video " << bag.id;
      throw ValidationError(os.str());
    }
    if (t.action && *t.action >= space.num_actions) {
      os << "action index " << *t.action << " out of range [0, " << space.num_actions
         << ") in label " << l << " of video " << bag.id;
      throw ValidationError(os.str());
    }
  }
  for (std::size_t j = 0; j < bag.tracks.size(); ++j) {
    const auto& tr = bag.tracks[j];
    check_features(tr.feat_subject, space.dim(Concept::subject), "feat_subject", bag, j);
    check_features(tr.feat_action, space.dim(Concept::action), "feat_action", bag, j);
    if (tr.ground_truth) {
      const auto& g = *tr.ground_truth;
      if ((g.subject && *g.subject >= space.num_subjects) ||
          (g.action && *g.action >= space.num_actions)) {
        std::ostringstream os;
        os << "ground_truth out of range at video " << bag.id << " track " << j;
        throw ValidationError(os.str());
      }
    }
  }
}

void validate_dataset(const Dataset& dataset) {
  dataset.space.validate();
  for (const auto& bag : dataset.videos) validate_bag(bag, dataset.space);
}

void HyperParams::validate(const ConceptSpace& space) const {
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ValidationError("alpha must be > 0");
  if (!(penalty_c >= 0.0) || !std::isfinite(penalty_c)) {
    throw ValidationError("penalty C must be >= 0");
  }
  if (k_max < space.num_labeled() || k_max == 0) {
    std::ostringstream os;
    os << "k_max " << k_max << " must be >= K_s + K_a = " << space.num_labeled()
       << " and >= 1";
    throw ValidationError(os.str());
  }
  for (std::size_t e = 0; e < kNumConcepts; ++e) {
    if (!(sigma_n2[e] > 0.0) || !(sigma_a2[e] > 0.0) || !std::isfinite(sigma_n2[e]) ||
        !std::isfinite(sigma_a2[e])) {
      throw ValidationError(std::string("variances for ") +
                            concept_name(static_cast<Concept>(e)) + " must be > 0");
    }
  }
}

BagConstraints build_constraints(const VideoBag& bag, const ConceptSpace& space,
                                 std::size_t k_max) {
  if (k_max < space.num_labeled()) {
    throw ValidationError("k_max smaller than the number of labeled factors");
  }
  BagConstraints out;
  out.mask.assign(k_max, 0);
  for (std::size_t k = space.num_labeled(); k < k_max; ++k) out.mask[k] = 1;

  for (const auto& t : dedup_labels(bag.labels)) {
    if (!t.subject && !t.action) {
      throw ValidationError("empty label tuple in video " + bag.id);
    }
    if (t.subject && *t.subject >= space.num_subjects) {
      throw ValidationError("subject index " + std::to_string(*t.subject) +
                            " out of range in video " + bag.id);
    }
    if (t.action && *t.action >= space.num_actions) {
      throw ValidationError("action index " + std::to_string(*t.action) +
                            " out of range in video " + bag.id);
    }
    if (t.subject) out.mask[space.subject_factor(*t.subject)] = 1;
    if (t.action) out.mask[space.action_factor(*t.action)] = 1;
    if (t.is_pair()) {
      out.pairs.emplace_back(*t.subject, *t.action);
    } else if (t.subject) {
      out.singleton_subject.push_back(*t.subject);
    } else {
      out.singleton_action.push_back(*t.action);
    }
  }
  return out;
}

BagConstraints free_annotation_constraints(std::size_t k_max) {
  BagConstraints out;
  out.mask.assign(k_max, 1);
  return out;
}

}  // namespace wsc
