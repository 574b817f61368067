#include <cmath>
#include <set>
#include <stdexcept>

#include "doctest.h"
#include "fgc/rng.hpp"

using fgc::PhiloxCounter;
using fgc::RandomStream;

TEST_CASE("philox4x32-10 known-answer vectors") {
  CHECK(fgc::philox4x32_10({0, 0, 0, 0}, {0, 0}) == PhiloxCounter{0x6627e8d5, 0xe169c58d, 0xbc57ac4c, 0x9b00dbd8});
  CHECK(fgc::philox4x32_10({0xffffffff, 0xffffffff, 0xffffffff, 0xffffffff}, {0xffffffff, 0xffffffff}) ==
        PhiloxCounter{0x408f276d, 0x41c83b0e, 0xa20bc7c6, 0x6d5451fd});
  CHECK(fgc::philox4x32_10({0x243f6a88, 0x85a308d3, 0x13198a2e, 0x03707344}, {0xa4093822, 0x299f31d0}) ==
        PhiloxCounter{0xd16cfe09, 0x94fdcceb, 0x5001e420, 0x24126ea1});
}

TEST_CASE("streams are reproducible and distinct") {
  RandomStream a(7, 3), b(7, 3), c(7, 4), d(8, 3);
  bool differs_c = false, differs_d = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u32();
    CHECK(va == b.next_u32());
    differs_c |= va != c.next_u32();
    differs_d |= va != d.next_u32();
  }
  CHECK(differs_c);
  CHECK(differs_d);
}

TEST_CASE("uniform lies in [0, 1) with the right moments") {
  RandomStream r(1, 0);
  double sum = 0.0, sq = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double u = r.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
    sq += u * u;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.005);
  CHECK(std::abs(sq / n - sum * sum / n / n - 1.0 / 12.0) < 0.002);
}

TEST_CASE("normal has zero mean and unit variance") {
  RandomStream r(2, 0);
  double sum = 0.0, sq = 0.0, fourth = 0.0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double z = r.normal();
    sum += z;
    sq += z * z;
    fourth += z * z * z * z;
  }
  CHECK(std::abs(sum / n) < 0.01);
  CHECK(std::abs(sq / n - 1.0) < 0.015);
  CHECK(std::abs(fourth / n - 3.0) < 0.1);
}

TEST_CASE("sign is balanced") {
  RandomStream r(3, 0);
  long total = 0;
  for (int i = 0; i < 100000; ++i) {
    const int s = r.sign();
    REQUIRE((s == 1 || s == -1));
    total += s;
  }
  CHECK(std::abs(total) < 1000);
}
