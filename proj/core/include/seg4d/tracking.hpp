#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "seg4d/spacetime.hpp"
#include "seg4d/types.hpp"

namespace seg4d::tracking {

/// Prediction of one window, per point in scan order.
struct WindowPrediction {
  spacetime::Window window;
  std::vector<ObjectId> ids;
  std::vector<std::uint32_t> scan_offsets;  // window.length + 1 entries

  /// Optional class of each id. Ids of stuff classes are associated by class.
  std::map<ObjectId, std::uint16_t> semantic;
  std::map<ObjectId, bool> thing;

  std::span<const ObjectId> scan(int scan_index) const;
};

struct IdMapping {
  std::vector<std::pair<ObjectId, ObjectId>> pairs;  // (left id, right id), ascending by left id
  std::vector<ObjectId> unmatched_left;
  std::vector<ObjectId> unmatched_right;
};

/// Pairwise IoU of non-background ids on the overlap scan.
std::map<std::pair<ObjectId, ObjectId>, double> overlap_ious(const WindowPrediction& left,
                                                             const WindowPrediction& right, int overlap_scan);

/// One-to-one matching: stuff ids pair up by class; remaining ids are matched
/// greedily by descending IoU, accepting IoU strictly above `threshold`.
IdMapping associate(const WindowPrediction& left, const WindowPrediction& right, int overlap_scan,
                    double threshold = 0.5);

struct StitchResult {
  int first_scan = 0;
  std::vector<std::vector<ObjectId>> scans;                // global id per point, per scan
  std::vector<std::map<ObjectId, ObjectId>> window_to_global;  // per window
};

/// Carries ids along a chain of windows. The first window keeps its ids;
/// later windows inherit matched ids and draw fresh ones above every local id.
/// The shared scan keeps the left window's labels.
StitchResult stitch(std::span<const WindowPrediction> windows, double threshold = 0.5);

}  // namespace seg4d::tracking
