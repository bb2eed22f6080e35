#include "stainlab/rng.hpp"

#include <sstream>

#include "stainlab/error.hpp"

namespace stainlab {

std::string Rng::state() const {
  std::ostringstream out;
  out << engine_;
  return out.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream in(state);
  in >> engine_;
  if (!in) fail(ErrorCode::IoError, "malformed generator state");
}

}  // namespace stainlab
