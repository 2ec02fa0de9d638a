#include "seg4d/tracking.hpp"

#include <algorithm>
#include <set>

#include <fmt/format.h>

#include "seg4d/errors.hpp"

namespace seg4d::tracking {

namespace {

bool is_stuff(const WindowPrediction& w, ObjectId id) {
  const auto t = w.thing.find(id);
  return w.semantic.contains(id) && t != w.thing.end() && !t->second;
}

std::set<ObjectId> ids_in(std::span<const ObjectId> ids) {
  std::set<ObjectId> out(ids.begin(), ids.end());
  out.erase(kBackground);
  return out;
}

std::set<ObjectId> all_ids(const WindowPrediction& w) { return ids_in(w.ids); }

}  // namespace

std::span<const ObjectId> WindowPrediction::scan(int scan_index) const {
  if (!window.contains(scan_index)) {
    throw InputError(fmt::format("scan {} is not part of window [{}, {})", scan_index, window.start, window.end()));
  }
  if (scan_offsets.size() != static_cast<std::size_t>(window.length) + 1 || scan_offsets.back() != ids.size()) {
    throw InputError("window prediction offsets do not match its ids");
  }
  const auto k = static_cast<std::size_t>(scan_index - window.start);
  return std::span<const ObjectId>(ids).subspan(scan_offsets[k], scan_offsets[k + 1] - scan_offsets[k]);
}

std::map<std::pair<ObjectId, ObjectId>, double> overlap_ious(const WindowPrediction& left,
                                                             const WindowPrediction& right, int overlap_scan) {
  const auto a = left.scan(overlap_scan);
  const auto b = right.scan(overlap_scan);
  if (a.size() != b.size()) throw InputError(fmt::format("overlap scan {} differs in point count", overlap_scan));
  std::map<ObjectId, std::size_t> size_a, size_b;
  std::map<std::pair<ObjectId, ObjectId>, std::size_t> inter;
  for (std::size_t p = 0; p < a.size(); ++p) {
    if (a[p] != kBackground) ++size_a[a[p]];
    if (b[p] != kBackground) ++size_b[b[p]];
    if (a[p] != kBackground && b[p] != kBackground) ++inter[{a[p], b[p]}];
  }
  std::map<std::pair<ObjectId, ObjectId>, double> out;
  for (const auto& [pair, n] : inter) {
    const std::size_t uni = size_a[pair.first] + size_b[pair.second] - n;
    out[pair] = static_cast<double>(n) / static_cast<double>(uni);
  }
  return out;
}

IdMapping associate(const WindowPrediction& left, const WindowPrediction& right, int overlap_scan,
                    double threshold) {
  const auto ious = overlap_ious(left, right, overlap_scan);
  const auto left_ids = all_ids(left);
  const auto right_ids = all_ids(right);
  std::set<ObjectId> used_left, used_right;
  IdMapping m;

  // Stuff: the class is the identity. Lowest ids pair first if a class
  // appears under several ids.
  std::map<std::uint16_t, std::vector<ObjectId>> stuff_left, stuff_right;
  for (const auto id : left_ids) {
    if (is_stuff(left, id)) stuff_left[left.semantic.at(id)].push_back(id);
  }
  for (const auto id : right_ids) {
    if (is_stuff(right, id)) stuff_right[right.semantic.at(id)].push_back(id);
  }
  for (const auto& [cls, ls] : stuff_left) {
    const auto it = stuff_right.find(cls);
    if (it == stuff_right.end()) continue;
    for (std::size_t i = 0; i < std::min(ls.size(), it->second.size()); ++i) {
      m.pairs.emplace_back(ls[i], it->second[i]);
      used_left.insert(ls[i]);
      used_right.insert(it->second[i]);
    }
  }

  std::vector<std::pair<std::pair<ObjectId, ObjectId>, double>> candidates;
  for (const auto& [pair, value] : ious) {
    if (is_stuff(left, pair.first) || is_stuff(right, pair.second)) continue;
    if (value > threshold) candidates.emplace_back(pair, value);
  }
  std::stable_sort(candidates.begin(), candidates.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  for (const auto& [pair, value] : candidates) {
    if (used_left.contains(pair.first) || used_right.contains(pair.second)) continue;
    m.pairs.push_back(pair);
    used_left.insert(pair.first);
    used_right.insert(pair.second);
  }
  std::sort(m.pairs.begin(), m.pairs.end());
  for (const auto id : left_ids) {
    if (!used_left.contains(id)) m.unmatched_left.push_back(id);
  }
  for (const auto id : right_ids) {
    if (!used_right.contains(id)) m.unmatched_right.push_back(id);
  }
  return m;
}

StitchResult stitch(std::span<const WindowPrediction> windows, double threshold) {
  if (windows.empty()) throw InputError("nothing to stitch");
  for (std::size_t i = 1; i < windows.size(); ++i) {
    const auto& prev = windows[i - 1].window;
    const auto& cur = windows[i].window;
    if (cur.start != prev.last() && cur.start != prev.end()) {
      throw InputError(fmt::format("window chain broken: window {} ends at scan {} but the next starts at {}", i - 1,
                                   prev.last(), cur.start));
    }
  }

  ObjectId next_global = 1;
  for (const auto& w : windows) {
    for (const auto id : w.ids) next_global = std::max(next_global, id + 1);
  }

  StitchResult out;
  out.first_scan = windows.front().window.start;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& w = windows[i];
    std::map<ObjectId, ObjectId> to_global;
    to_global[kBackground] = kBackground;
    if (i == 0) {
      for (const auto id : all_ids(w)) to_global[id] = id;
    } else {
      const auto& prev = windows[i - 1];
      std::map<ObjectId, ObjectId> inherited;
      if (w.window.start == prev.window.last()) {
        for (const auto& [l, r] : associate(prev, w, w.window.start, threshold).pairs) {
          inherited[r] = out.window_to_global[i - 1].at(l);
        }
      }
      for (const auto id : all_ids(w)) {
        const auto it = inherited.find(id);
        to_global[id] = it != inherited.end() ? it->second : next_global++;
      }
    }
    const int first = i == 0 || w.window.start != windows[i - 1].window.last() ? w.window.start : w.window.start + 1;
    for (int scan = first; scan < w.window.end(); ++scan) {
      const auto local = w.scan(scan);
      std::vector<ObjectId> global(local.size());
      for (std::size_t p = 0; p < local.size(); ++p) global[p] = to_global.at(local[p]);
      out.scans.push_back(std::move(global));
    }
    out.window_to_global.push_back(std::move(to_global));
  }
  return out;
}

}  // namespace seg4d::tracking
