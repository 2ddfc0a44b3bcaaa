#include <doctest.h>

#include <filesystem>

#include "duet/synthetic.hpp"

using namespace duet;
namespace fs = std::filesystem;

TEST_CASE("corpus generation is deterministic") {
  CorpusParams p;
  p.n = 40;
  p.seed = 3;
  const Corpus a = gen_corpus(p), b = gen_corpus(p);
  REQUIRE(a.samples.size() == 40);
  for (std::size_t i = 0; i < 40; ++i) {
    CHECK(a.samples[i].image == b.samples[i].image);
    CHECK(a.samples[i].noisy_report == b.samples[i].noisy_report);
  }
  CHECK(dataset_hash(a) == dataset_hash(b));
  p.seed = 4;
  CHECK(dataset_hash(gen_corpus(p)) != dataset_hash(a));
  p.n = 0;
  CHECK_THROWS_AS(gen_corpus(p), std::invalid_argument);
}

TEST_CASE("finding marginals match the configured probability") {
  CorpusParams p;
  p.n = 10000;
  p.seed = 11;
  p.resolution = 16;
  std::array<std::size_t, kNumFindings> count{};
  Rng rng(p.seed);
  for (std::size_t i = 0; i < p.n; ++i) {
    const SceneSpec s = sample_scene(p, rng);
    for (std::size_t k = 0; k < kNumFindings; ++k) count[k] += s.findings[k].present;
  }
  for (std::size_t k = 0; k < kNumFindings; ++k) {
    CAPTURE(finding_name(k));
    CHECK(std::abs(static_cast<double>(count[k]) / 10000.0 - 0.3) < 0.02);
  }
}

TEST_CASE("single sample at the minimum resolution") {
  CorpusParams p;
  p.n = 1;
  p.resolution = 16;
  const Corpus c = gen_corpus(p);
  CHECK(c.samples[0].image.size() == 256);
  for (double v : c.samples[0].image) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK_THROWS_AS(render(c.samples[0].spec, 8), std::invalid_argument);
}

TEST_CASE("report cleaning") {
  CHECK(clean_report("___ FINAL REPORT ring present") == "ring present");
  CHECK(clean_report("[ACC 12345]\nmild band upper . ____ thank you") == "mild band upper .");
  CorpusParams p;
  p.n = 400;
  const Corpus c = gen_corpus(p);
  for (const auto& s : c.samples) {
    CHECK(clean_report(s.clean_report) == s.clean_report);
    CHECK(clean_report(s.noisy_report) == s.clean_report);
    CHECK(clean_report(clean_report(s.noisy_report)) == clean_report(s.noisy_report));
    CHECK(extract_labels(clean_report(s.noisy_report)) == s.labels);
  }
}

TEST_CASE("label extraction") {
  SceneSpec spec;
  spec.findings[static_cast<std::size_t>(Finding::ring)].present = true;
  const Labels ring = extract_labels(templated_report(spec));
  CHECK(ring == Labels{0, 0, 1, 0, 0, 0});
  CHECK(extract_labels("") == Labels{});
  CHECK(extract_labels("no acute findings .") == Labels{});

  spec.hedge = static_cast<int>(Finding::band);
  const std::string hedged = templated_report(spec);
  CHECK(extract_labels(hedged, UncertainMode::as_negative) == Labels{0, 0, 1, 0, 0, 0});
  CHECK(extract_labels(hedged, UncertainMode::as_positive) == Labels{0, 0, 1, 1, 0, 0});

  CorpusParams p;
  p.n = 1000;
  p.resolution = 16;
  const Corpus c = gen_corpus(p);
  for (const auto& s : c.samples) {
    CHECK(extract_labels(s.clean_report) == s.labels);
    if (s.spec.hedge < 0) CHECK(extract_labels(s.clean_report, UncertainMode::as_positive) == s.labels);
  }
}

TEST_CASE("rendering locality") {
  CorpusParams p;
  Rng rng(5);
  for (int trial = 0; trial < 30; ++trial) {
    SceneSpec spec = sample_scene(p, rng);
    for (std::size_t k = 0; k < kNumFindings; ++k) {
      SceneSpec on = spec, off = spec;
      on.findings[k].present = true;
      off.findings[k].present = false;
      const auto a = render(on, 32), b = render(off, 32);
      const auto region = finding_region(on, k, 32);
      std::size_t outside_changes = 0, inside_changes = 0;
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] == b[i]) continue;
        (region[i] ? inside_changes : outside_changes) += 1;
      }
      CAPTURE(finding_name(k));
      CHECK(outside_changes == 0);
      CHECK(inside_changes > 0);
    }
  }
}

TEST_CASE("corpus directory round trip") {
  CorpusParams p;
  p.n = 25;
  p.resolution = 16;
  const Corpus c = gen_corpus(p);
  const fs::path dir = fs::temp_directory_path() / "duet_corpus_rt";
  fs::remove_all(dir);
  save_corpus(dir, c);
  const Corpus back = load_corpus(dir);
  CHECK(dataset_hash(back) == dataset_hash(c));
  REQUIRE(back.samples.size() == 25);
  CHECK(back.samples[7].noisy_report == c.samples[7].noisy_report);
  CHECK(back.test_indices() == std::vector<std::size_t>{0, 20});
  fs::remove_all(dir);
}
