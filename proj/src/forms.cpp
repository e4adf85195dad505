#include "crlab/forms.hpp"

#include <sstream>

namespace crlab {

std::string mask_to_string(uint32_t mask, bool chart) {
  std::ostringstream os;
  bool first = true;
  auto emit = [&](const char* name, int idx) {
    if (!first) os << "^";
    first = false;
    os << name;
    if (idx >= 0) os << (idx + 1);
  };
  for (uint32_t x = mask; x; x &= x - 1) {
    int bit = std::countr_zero(x);
    if (chart) {
      if (bit < 6) emit("dwb", bit);
      else if (bit < 12) emit("dw", bit - 6);
      else if (bit < 18) emit("dy", bit - 12);
      else emit("dx", bit - 18);
    } else {
      if (bit < 6) emit("dcb", bit);
      else if (bit < 12) emit("dzb", bit - 6);
      else if (bit == 12) emit("dt", -1);
      else emit("dc", bit - 13);
    }
  }
  if (first) os << "1";
  return os.str();
}

}  // namespace crlab
