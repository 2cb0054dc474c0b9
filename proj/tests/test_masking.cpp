#include <algorithm>
#include <cmath>
#include <vector>

#include "differ/masking.hpp"
#include "doctest.h"

using namespace differ;

namespace {

// Random disjoint spans over [0, n).
std::vector<TokenSpan> random_disjoint_spans(std::size_t n, Rng& rng) {
  std::vector<TokenSpan> out;
  std::int32_t k = 0;
  while (k < static_cast<std::int32_t>(n)) {
    if (rng.bernoulli(0.4)) {
      const auto len = static_cast<std::int32_t>(1 + rng.below(3));
      const std::int32_t last = std::min<std::int32_t>(k + len - 1, static_cast<std::int32_t>(n) - 1);
      out.push_back({k, last});
      k = last + 1;
    } else {
      ++k;
    }
  }
  return out;
}

// Direct reading of the contagion rule: a position ends masked if it was
// masked or shares a span with any masked position.
std::vector<std::uint8_t> wem_oracle(const std::vector<TokenSpan>& spans,
                                     const std::vector<std::uint8_t>& m) {
  std::vector<std::uint8_t> out(m.size());
  for (std::size_t k = 0; k < m.size(); ++k) {
    bool masked = m[k] != 0;
    for (const auto& s : spans) {
      if (!s.contains(static_cast<std::int32_t>(k))) continue;
      for (auto j = s.first; j <= s.last; ++j) masked = masked || m[static_cast<std::size_t>(j)];
    }
    out[k] = masked ? 1 : 0;
  }
  return out;
}

AnnotatedSequence plain_sequence(std::size_t n) {
  AnnotatedSequence s;
  s.ids.assign(n, 4);
  return s;
}

std::vector<std::uint8_t> coverage(const std::vector<TokenSpan>& spans, std::size_t n) {
  std::vector<std::uint8_t> c(n, 0);
  for (const auto& s : spans) {
    for (auto k = s.first; k <= s.last; ++k) c[static_cast<std::size_t>(k)] = 1;
  }
  return c;
}

}  // namespace

TEST_CASE("whole-entity contagion matches the oracle on every mask up to length 12") {
  Rng rng(5);
  for (std::size_t n = 1; n <= 12; ++n) {
    for (int draw = 0; draw < 4; ++draw) {
      const auto spans = random_disjoint_spans(n, rng);
      for (std::uint32_t bits = 0; bits < (1u << n); ++bits) {
        MaskVector m;
        m.bits.resize(n);
        for (std::size_t k = 0; k < n; ++k) m.bits[k] = (bits >> k) & 1u;
        const auto got = apply_wem(spans, m);
        REQUIRE(got.bits == wem_oracle(spans, m.bits));
        REQUIRE(count_partial_spans(spans, got) == 0);
      }
    }
  }
}

TEST_CASE("exact masking probability of a span is 1 - (1 - t)^len") {
  // Enumerate all provisional masks of a length-8 sequence with spans of
  // length 1, 3 and 4, weight each by its Bernoulli(t) probability and sum.
  const std::vector<TokenSpan> spans = {{0, 0}, {1, 3}, {4, 7}};
  const std::size_t n = 8;
  for (double t : {0.05, 0.3, 0.5, 0.9}) {
    std::vector<double> p_masked(n, 0.0);
    for (std::uint32_t bits = 0; bits < (1u << n); ++bits) {
      MaskVector m;
      m.bits.resize(n);
      double w = 1.0;
      for (std::size_t k = 0; k < n; ++k) {
        m.bits[k] = (bits >> k) & 1u;
        w *= m.bits[k] ? t : 1.0 - t;
      }
      const auto out = apply_wem(spans, m);
      for (std::size_t k = 0; k < n; ++k) p_masked[k] += out.bits[k] ? w : 0.0;
    }
    for (const auto& s : spans) {
      const double expect = 1.0 - std::pow(1.0 - t, s.length());
      for (auto k = s.first; k <= s.last; ++k) {
        CHECK(p_masked[static_cast<std::size_t>(k)] == doctest::Approx(expect).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("resolve_spans: exhaustive properties for sequences up to length 6") {
  for (std::int32_t n = 1; n <= 6; ++n) {
    std::vector<TokenSpan> all;
    for (std::int32_t a = 0; a < n; ++a) {
      for (std::int32_t b = a; b < n; ++b) all.push_back({a, b});
    }
    const std::size_t m = all.size();
    auto check = [&](const std::vector<TokenSpan>& in) {
      const auto out = resolve_spans(in);
      for (std::size_t i = 0; i + 1 < out.size(); ++i) REQUIRE(out[i].last < out[i + 1].first);
      REQUIRE(coverage(out, static_cast<std::size_t>(n)) ==
              coverage(in, static_cast<std::size_t>(n)));
      for (const auto& o : out) {
        // truncation only moves the start
        const bool from_input = std::any_of(in.begin(), in.end(), [&](const TokenSpan& s) {
          return s.last == o.last && s.first <= o.first;
        });
        REQUIRE(from_input);
      }
      // the longest span among those starting leftmost survives whole
      if (!in.empty()) {
        TokenSpan lead = in[0];
        for (const auto& s : in) {
          if (s.first < lead.first || (s.first == lead.first && s.last > lead.last)) lead = s;
        }
        REQUIRE(out.front() == lead);
      }
      REQUIRE(resolve_spans(out) == out);
    };
    check({});
    for (std::size_t i = 0; i < m; ++i) {
      check({all[i]});
      for (std::size_t j = 0; j < m; ++j) {
        check({all[i], all[j]});
        for (std::size_t k = j; k < m; ++k) check({all[i], all[j], all[k]});
      }
    }
  }
}

TEST_CASE("resolve_spans examples") {
  CHECK(resolve_spans({{2, 3}, {0, 4}}) == std::vector<TokenSpan>{{0, 4}});
  CHECK(resolve_spans({{3, 6}, {0, 4}}) == std::vector<TokenSpan>{{0, 4}, {5, 6}});
  CHECK(resolve_spans({{0, 1}, {0, 3}}) == std::vector<TokenSpan>{{0, 3}});
  CHECK(resolve_spans({{4, 5}, {0, 1}}) == std::vector<TokenSpan>{{0, 1}, {4, 5}});
}

TEST_CASE("property: contagion is extensive, idempotent and monotone") {
  Rng rng(8);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t n = 1 + rng.below(20);
    const auto spans = random_disjoint_spans(n, rng);
    MaskVector a, b;
    a.bits.resize(n);
    b.bits.resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      a.bits[k] = rng.bernoulli(0.3);
      b.bits[k] = a.bits[k] || rng.bernoulli(0.3);
    }
    const auto wa = apply_wem(spans, a);
    const auto wb = apply_wem(spans, b);
    for (std::size_t k = 0; k < n; ++k) {
      REQUIRE(wa.bits[k] >= a.bits[k]);
      REQUIRE(wb.bits[k] >= wa.bits[k]);
    }
    REQUIRE(apply_wem(spans, wa).bits == wa.bits);
  }
}

TEST_CASE("base mask rate tracks the noise level") {
  Rng rng(2);
  const auto seq = plain_sequence(50);
  for (double t : {0.1, 0.5, 0.9}) {
    MaskSpec spec;
    spec.noise_level = t;
    std::size_t masked = 0;
    const int trials = 2000;
    for (int i = 0; i < trials; ++i) masked += sample_base_mask(seq, spec, rng).count();
    const double rate = static_cast<double>(masked) / (50.0 * trials);
    // 100000 Bernoulli draws: sd <= 0.0016
    CHECK(std::abs(rate - t) < 0.01);
  }
  MaskSpec bad;
  bad.noise_level = 0.0;
  CHECK_THROWS_AS(sample_base_mask(seq, bad, rng), UsageError);
}

TEST_CASE("whole-entity span masking rate tracks 1 - (1 - t)^len by simulation") {
  Rng rng(4);
  AnnotatedSequence seq = plain_sequence(6);
  seq.entity_spans = {{1, 3}};
  MaskSpec spec;
  spec.noise_level = 0.3;
  spec.mode = MaskMode::whole_entity;
  int hits = 0;
  const int trials = 40000;
  for (int i = 0; i < trials; ++i) {
    const auto c = corrupt(seq, spec, rng);
    REQUIRE(count_partial_spans(seq.entity_spans, c.mask) == 0);
    hits += c.mask.bits[1];
  }
  CHECK(std::abs(hits / static_cast<double>(trials) - (1.0 - 0.7 * 0.7 * 0.7)) < 0.01);
}

TEST_CASE("property: prompt positions are never masked when respected") {
  Rng rng(6);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 2 + rng.below(15);
    AnnotatedSequence seq = plain_sequence(n);
    seq.prompt_len = 1 + rng.below(n - 1);
    // entities on either side of the boundary, never across it
    for (const auto& s : random_disjoint_spans(n, rng)) {
      const auto p = static_cast<std::int32_t>(seq.prompt_len);
      if (s.first < p && s.last >= p) continue;
      seq.entity_spans.push_back(s);
    }
    for (MaskMode mode : {MaskMode::token, MaskMode::whole_entity}) {
      const auto c = corrupt_for_training(seq, mode, true, {}, rng);
      REQUIRE(c.mask.count() >= 1);
      for (std::size_t k = 0; k < seq.prompt_len; ++k) {
        REQUIRE(c.mask.bits[k] == 0);
        REQUIRE(c.ids[k] == seq.ids[k]);
      }
      for (std::size_t k = 0; k < n; ++k) {
        REQUIRE((c.ids[k] == Vocabulary::kMask) == (c.mask.bits[k] == 1));
      }
      REQUIRE(c.clean_ids == seq.ids);
      if (mode == MaskMode::whole_entity) {
        REQUIRE(count_partial_spans(seq.entity_spans, c.mask) == 0);
      }
    }
  }
}

TEST_CASE("restricted masking stays inside the allowed spans") {
  Rng rng(12);
  AnnotatedSequence seq = plain_sequence(10);
  seq.entity_spans = {{0, 1}, {8, 9}};
  const std::vector<TokenSpan> allowed = {{4, 5}};
  for (int i = 0; i < 500; ++i) {
    const auto c = corrupt_for_training(seq, MaskMode::whole_entity, false, allowed, rng);
    REQUIRE(c.mask.count() >= 1);
    for (std::size_t k = 0; k < 10; ++k) {
      if (k != 4 && k != 5) REQUIRE(c.mask.bits[k] == 0);
    }
  }
  AnnotatedSequence all_prompt = plain_sequence(3);
  all_prompt.prompt_len = 3;
  CHECK_THROWS_AS(corrupt_for_training(all_prompt, MaskMode::token, true, {}, rng), DataError);
}

TEST_CASE("corruption is deterministic given the seed") {
  AnnotatedSequence seq = plain_sequence(12);
  seq.entity_spans = {{2, 4}, {7, 8}};
  Rng a(99), b(99);
  for (int i = 0; i < 50; ++i) {
    const auto x = corrupt_for_training(seq, MaskMode::whole_entity, false, {}, a);
    const auto y = corrupt_for_training(seq, MaskMode::whole_entity, false, {}, b);
    REQUIRE(x.mask.bits == y.mask.bits);
    REQUIRE(x.mask.noise_level == y.mask.noise_level);
  }
}

TEST_CASE("mask mode names") {
  CHECK(parse_mask_mode("whole-entity") == MaskMode::whole_entity);
  CHECK(to_string(MaskMode::token) == "token");
  CHECK_THROWS_AS(parse_mask_mode("span"), UsageError);
}
