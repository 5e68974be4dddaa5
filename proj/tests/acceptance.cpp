// Runs the full acceptance battery and prints one line per criterion.
// Exit status is nonzero if anything failed.

#include <algorithm>
#include <cstdio>

#include "proklsh/verify.hpp"

int main() {
  proklsh::verify::SuiteResult res = proklsh::verify::run_suite("all");
  for (const auto& c : res.criteria) {
    std::printf("%s\n", proklsh::verify::format_line(c).c_str());
    if (!c.pass) {
      for (const auto& chk : c.checks)
        if (!chk.pass) std::printf("       failed check: %s (%s)\n", chk.name.c_str(), chk.detail.c_str());
    }
  }
  std::printf("%zu/%zu criteria passed (%.1fs total)\n",
              static_cast<size_t>(std::count_if(res.criteria.begin(), res.criteria.end(),
                                                [](const auto& c) { return c.pass; })),
              res.criteria.size(), res.seconds);
  return res.all_pass ? 0 : 1;
}
