#pragma once

// Occupancy grid over the room floor used for connectivity checks and path
// planning. Internal to synthworld.

#include <cstddef>
#include <vector>

#include "baa/synthworld/synthworld.hpp"

namespace baa::synthworld::detail {

struct Cell {
  int i = 0, j = 0;
};

class NavGrid {
 public:
  NavGrid(const Scene& scene, double cell);

  int nx() const { return nx_; }
  int ny() const { return ny_; }
  bool free(int i, int j) const { return i >= 0 && j >= 0 && i < nx_ && j < ny_ && free_[index(i, j)]; }
  int index(int i, int j) const { return j * nx_ + i; }
  Vec3 centre(int i, int j, double z) const;
  Cell cell_of(double x, double y) const;

  // Component label per cell (-1 for blocked) and the label of the largest one.
  std::vector<int> components(int& largest, std::size_t& largest_size) const;

  // 8-connected Dijkstra without corner cutting. Empty when unreachable.
  std::vector<Cell> shortest_path(Cell from, Cell to) const;

 private:
  const Scene& scene_;
  double cell_;
  double x0_, y0_;
  int nx_ = 0, ny_ = 0;
  std::vector<char> free_;
};

}  // namespace baa::synthworld::detail
