#pragma once

// Bidirectional grid road topology.
//
// Intersection (r, c) sits at world position (c * lane_length, -r * lane_length);
// North is +y. Every intersection has four outgoing lanes, one per heading,
// leading either to the neighbouring intersection or to a dead end one lane
// length beyond the grid (a boundary stub). Each stub also carries a return
// lane back into the grid. Lane ids:
//   4 * intersection + heading   outgoing lanes
//   4 * I + k                    k-th stub return lane (in outgoing-lane order)
// At an intersection all three turns exist; at a dead end only Left exists,
// and it is the U-turn onto the stub's return lane.

#include <array>
#include <compare>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pursuit/error.hpp"

namespace pursuit {

enum class TurnAction : std::uint8_t { Straight = 0, Left = 1, Right = 2 };

inline constexpr std::array<TurnAction, 3> kTurnActions{TurnAction::Straight, TurnAction::Left, TurnAction::Right};
inline constexpr std::size_t kNumActions = 3;

inline std::size_t action_index(TurnAction a) { return static_cast<std::size_t>(a); }
inline TurnAction action_from_index(std::size_t i) { return kTurnActions.at(i); }

inline const char* to_string(TurnAction a) {
  switch (a) {
    case TurnAction::Straight: return "straight";
    case TurnAction::Left: return "left";
    case TurnAction::Right: return "right";
  }
  return "?";
}

enum class Heading : std::uint8_t { North = 0, East = 1, South = 2, West = 3 };

inline Heading turn_heading(Heading h, TurnAction a) {
  const int base = static_cast<int>(h);
  switch (a) {
    case TurnAction::Straight: return h;
    case TurnAction::Left: return static_cast<Heading>((base + 3) % 4);
    case TurnAction::Right: return static_cast<Heading>((base + 1) % 4);
  }
  return h;
}

inline Heading opposite(Heading h) { return static_cast<Heading>((static_cast<int>(h) + 2) % 4); }

inline bool is_north_south(Heading h) { return h == Heading::North || h == Heading::South; }

struct LaneId {
  std::uint32_t index = 0;
  auto operator<=>(const LaneId&) const = default;
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline double euclidean(Point a, Point b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// Which of the three turns exist at the end of a lane.
using TurnMask = std::array<bool, kNumActions>;

class RoadNetwork {
 public:
  struct Lane {
    Point start;
    Point end;
    Point direction;  // unit vector, axis-aligned
    Heading heading = Heading::North;
    std::optional<std::uint32_t> end_intersection;  // empty at a dead end
    std::array<std::optional<LaneId>, kNumActions> successors;
  };

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t num_intersections() const { return rows_ * cols_; }
  std::size_t num_lanes() const { return lanes_.size(); }
  double lane_length() const { return lane_length_; }

  const Lane& lane(LaneId id) const {
    check(id);
    return lanes_[id.index];
  }

  std::optional<LaneId> successor(LaneId id, TurnAction a) const { return lane(id).successors[action_index(a)]; }

  std::optional<std::uint32_t> end_intersection(LaneId id) const { return lane(id).end_intersection; }

  Heading heading(LaneId id) const { return lane(id).heading; }

  TurnMask available_turns(LaneId id) const {
    const auto& s = lane(id).successors;
    return {s[0].has_value(), s[1].has_value(), s[2].has_value()};
  }

  /// World position at `offset` meters from the start of the lane.
  Point position(LaneId id, double offset) const {
    const Lane& l = lane(id);
    return {l.start.x + l.direction.x * offset, l.start.y + l.direction.y * offset};
  }

  /// Flattened row-major L x L matrix; entry (l, l') is 1 iff l' is a
  /// successor of l under some turn.
  std::span<const std::uint8_t> adjacency() const { return adjacency_; }

  bool adjacent(LaneId from, LaneId to) const {
    check(from);
    check(to);
    return adjacency_[from.index * lanes_.size() + to.index] != 0;
  }

  /// Positions of the ones in the flattened adjacency, in increasing order.
  std::span<const std::uint32_t> adjacency_nonzeros() const { return adjacency_nonzeros_; }

  std::vector<double> lane_one_hot(std::optional<LaneId> id) const {
    std::vector<double> v(lanes_.size(), 0.0);
    if (id) {
      check(*id);
      v[id->index] = 1.0;
    }
    return v;
  }

  /// Plain-text listing, one line per lane: id, heading, end, successors.
  std::string adjacency_listing() const {
    static constexpr const char* kHeadingNames[] = {"N", "E", "S", "W"};
    std::ostringstream os;
    os << "# grid " << rows_ << "x" << cols_ << " lane_length " << lane_length_ << " lanes " << lanes_.size() << "\n";
    for (std::uint32_t i = 0; i < lanes_.size(); ++i) {
      const Lane& l = lanes_[i];
      os << i << " " << kHeadingNames[static_cast<int>(l.heading)] << " end=";
      if (l.end_intersection) {
        os << "I" << *l.end_intersection;
      } else {
        os << "dead-end";
      }
      for (std::size_t a = 0; a < kNumActions; ++a) {
        os << " " << to_string(kTurnActions[a]) << "=";
        if (l.successors[a]) {
          os << l.successors[a]->index;
        } else {
          os << "-";
        }
      }
      os << "\n";
    }
    return os.str();
  }

  bool operator==(const RoadNetwork& o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_ || lane_length_ != o.lane_length_ || adjacency_ != o.adjacency_) {
      return false;
    }
    for (std::size_t i = 0; i < lanes_.size(); ++i) {
      const Lane &a = lanes_[i], &b = o.lanes_[i];
      if (a.start.x != b.start.x || a.start.y != b.start.y || a.end.x != b.end.x || a.end.y != b.end.y ||
          a.heading != b.heading || a.end_intersection != b.end_intersection || a.successors != b.successors) {
        return false;
      }
    }
    return true;
  }

  friend RoadNetwork build_grid(int rows, int cols, double lane_length);

 private:
  void check(LaneId id) const {
    if (id.index >= lanes_.size()) throw ContractError("lane id " + std::to_string(id.index) + " out of range");
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  double lane_length_ = 0.0;
  std::vector<Lane> lanes_;
  std::vector<std::uint8_t> adjacency_;
  std::vector<std::uint32_t> adjacency_nonzeros_;
};

inline RoadNetwork build_grid(int rows, int cols, double lane_length) {
  if (rows < 2 || cols < 2) throw ConfigError("grid needs at least 2 rows and 2 columns");
  if (!(lane_length > 0.0) || !std::isfinite(lane_length)) throw ConfigError("lane_length must be positive");

  static constexpr int kDr[] = {-1, 0, 1, 0};
  static constexpr int kDc[] = {0, 1, 0, -1};

  RoadNetwork net;
  net.rows_ = static_cast<std::size_t>(rows);
  net.cols_ = static_cast<std::size_t>(cols);
  net.lane_length_ = lane_length;
  const std::uint32_t n_inter = static_cast<std::uint32_t>(rows * cols);

  auto node_point = [&](int r, int c) { return Point{c * lane_length, -r * lane_length}; };

  // Outgoing lanes, then one return lane per stub.
  std::vector<std::uint32_t> stub_outgoing;
  net.lanes_.resize(4 * n_inter);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const std::uint32_t k = static_cast<std::uint32_t>(r * cols + c);
      for (int d = 0; d < 4; ++d) {
        RoadNetwork::Lane& l = net.lanes_[4 * k + d];
        l.heading = static_cast<Heading>(d);
        l.start = node_point(r, c);
        const int nr = r + kDr[d], nc = c + kDc[d];
        l.end = node_point(nr, nc);
        l.direction = Point{static_cast<double>(kDc[d]), static_cast<double>(-kDr[d])};
        if (nr >= 0 && nr < rows && nc >= 0 && nc < cols) {
          l.end_intersection = static_cast<std::uint32_t>(nr * cols + nc);
        } else {
          stub_outgoing.push_back(4 * k + d);
        }
      }
    }
  }
  for (std::uint32_t out_id : stub_outgoing) {
    const RoadNetwork::Lane& out = net.lanes_[out_id];
    RoadNetwork::Lane back;
    back.heading = opposite(out.heading);
    back.start = out.end;
    back.end = out.start;
    back.direction = Point{-out.direction.x, -out.direction.y};
    back.end_intersection = out_id / 4;
    net.lanes_.push_back(back);
  }

  for (std::uint32_t i = 0; i < net.lanes_.size(); ++i) {
    RoadNetwork::Lane& l = net.lanes_[i];
    if (l.end_intersection) {
      for (std::size_t a = 0; a < kNumActions; ++a) {
        const Heading h = turn_heading(l.heading, kTurnActions[a]);
        l.successors[a] = LaneId{4 * *l.end_intersection + static_cast<std::uint32_t>(h)};
      }
    }
  }
  for (std::size_t k = 0; k < stub_outgoing.size(); ++k) {
    net.lanes_[stub_outgoing[k]].successors[action_index(TurnAction::Left)] =
        LaneId{4 * n_inter + static_cast<std::uint32_t>(k)};
  }

  const std::size_t n = net.lanes_.size();
  net.adjacency_.assign(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& s : net.lanes_[i].successors) {
      if (s) net.adjacency_[i * n + s->index] = 1;
    }
  }
  for (std::uint32_t k = 0; k < net.adjacency_.size(); ++k) {
    if (net.adjacency_[k]) net.adjacency_nonzeros_.push_back(k);
  }
  return net;
}

inline std::optional<LaneId> successor(const RoadNetwork& net, LaneId lane, TurnAction a) {
  return net.successor(lane, a);
}

inline std::vector<double> lane_one_hot(const RoadNetwork& net, std::optional<LaneId> lane) {
  return net.lane_one_hot(lane);
}

}  // namespace pursuit
