// Scriptable stand-in for an external segmenter process.
//
//   fake_segmenter <mode> [seconds]
//
// zeros       all-zero responses
// baseline    -|center - click| responses, like the built-in baseline
// labels      every voxel labeled with the object of its nearest click
// close       writes half a response, then exits
// badversion  answers hello with version 99
// nan         responses containing NaN
// error       replies with an error message
// slow        sleeps [seconds] (default 5) before answering
#include <chrono>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

using nlohmann::json;

namespace {

struct V3 {
  double x, y, z;
};

V3 vec(const json& a) { return {a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>()}; }

double dist2(const V3& a, const V3& b) {
  const double dx = a.x - b.x;
  const double dy = a.y - b.y;
  const double dz = a.z - b.z;
  return dx * dx + dy * dy + dz * dz;
}

void reply(const json& j) {
  std::cout << j.dump() << '\n';
  std::cout.flush();
}

}  // namespace

int main(int argc, char** argv) {
  const std::string mode = argc > 1 ? argv[1] : "baseline";
  const double seconds = argc > 2 ? std::stod(argv[2]) : 5.0;

  std::string line;
  if (!std::getline(std::cin, line)) return 1;
  reply({{"type", "hello"}, {"version", mode == "badversion" ? 99 : 1}});

  while (std::getline(std::cin, line)) {
    const json req = json::parse(line);
    const auto& voxels = req.at("voxels");
    const auto& clicks = req.at("clicks");
    std::vector<V3> centers;
    for (const auto& v : voxels) centers.push_back(vec(v.at("center")));

    if (mode == "slow") std::this_thread::sleep_for(std::chrono::duration<double>(seconds));
    if (mode == "error") {
      reply({{"type", "error"}, {"message", "model not loaded"}});
      continue;
    }
    if (mode == "close") {
      std::cout << R"({"type":"segment_response","kind":"resp)";
      std::cout.flush();
      return 0;
    }
    if (mode == "nan") {
      std::string row = "[";
      for (std::size_t v = 0; v < centers.size(); ++v) row += v ? ",NaN" : "NaN";
      row += "]";
      std::string data = "[";
      for (std::size_t c = 0; c < clicks.size(); ++c) data += (c ? "," : "") + row;
      data += "]";
      std::cout << R"({"type":"segment_response","kind":"responses","data":)" << data << "}\n";
      std::cout.flush();
      continue;
    }
    if (mode == "labels") {
      json data = json::array();
      for (const auto& center : centers) {
        double best = INFINITY;
        unsigned id = 0;
        for (const auto& c : clicks) {
          const double d = dist2(center, vec(c.at("pos")));
          if (d < best) {
            best = d;
            id = c.at("object").get<unsigned>();
          }
        }
        data.push_back(id);
      }
      reply({{"type", "segment_response"}, {"kind", "labels"}, {"data", data}});
      continue;
    }
    json data = json::array();
    for (const auto& c : clicks) {
      const V3 p = vec(c.at("pos"));
      json row = json::array();
      for (const auto& center : centers) row.push_back(mode == "zeros" ? 0.0 : -std::sqrt(dist2(center, p)));
      data.push_back(std::move(row));
    }
    reply({{"type", "segment_response"}, {"kind", "responses"}, {"data", data}});
  }
  return 0;
}
