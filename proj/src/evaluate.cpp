#include "duet/evaluate.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include "duet/vocab.hpp"

namespace duet {

namespace {

std::string num(double v) { return std::isfinite(v) ? format_double(v) : "na"; }

void add_f1(KeyValues& kv, const std::string& prefix, const F1Result& f) {
  kv.emplace_back(prefix + ".micro", num(f.micro));
  kv.emplace_back(prefix + ".macro", num(f.macro));
}

}  // namespace

MetricReport evaluate(const Model& model, const Corpus& corpus, const EvalOptions& options) {
  auto test = corpus.test_indices();
  if (options.max_samples > 0 && test.size() > options.max_samples) test.resize(options.max_samples);
  if (test.empty()) throw std::invalid_argument("evaluation corpus has no test samples");
  if (options.generation && (!model.has_codec || !model.has_probe))
    throw std::runtime_error("generation metrics need the trained codec and probe; run prepare first");

  MetricReport r;
  r.probe_hash = model.has_probe ? model.probe.hash() : "none";
  r.resolution = options.resolution;
  const std::size_t n = test.size();

  if (options.understanding) {
    std::vector<Labels> pred_neg, pred_pos, true_neg, true_pos, zeros(n, Labels{});
    for (std::size_t j = 0; j < n; ++j) {
      const auto& s = corpus.samples[test[j]];
      const std::vector<double> img = s.resolution == model.config.image_size ? s.image : render(s.spec, model.config.image_size);
      const std::string text = describe_image(model, img);
      pred_neg.push_back(extract_labels(text, UncertainMode::as_negative));
      pred_pos.push_back(extract_labels(text, UncertainMode::as_positive));
      true_neg.push_back(extract_labels(s.clean_report, UncertainMode::as_negative));
      true_pos.push_back(extract_labels(s.clean_report, UncertainMode::as_positive));
      if (options.log && (j + 1) % 25 == 0) *options.log << "evaluate: decoded " << j + 1 << "/" << n << std::endl;
    }
    r.f1_negative = micro_macro_f1(pred_neg, true_neg);
    r.f1_positive = micro_macro_f1(pred_pos, true_pos);
    r.f1_all_negative_baseline = micro_macro_f1(zeros, true_neg);
    r.understanding_samples = n;
  }

  if (options.generation) {
    const std::size_t res = options.resolution;
    FeatureSet real, fake;
    std::vector<Labels> cond, predicted, real_pred;
    GenerateOptions g;
    g.steps = options.sample_steps;
    g.resolution = res;
    for (std::size_t j = 0; j < n; ++j) {
      const auto& s = corpus.samples[test[j]];
      const auto real_img = render(s.spec, res);
      g.seed = mix_seed(options.seed, test[j]);
      const auto img = generate_image(model, s.clean_report, g);
      real.push_back(model.probe.features(real_img, res));
      fake.push_back(model.probe.features(img, res));
      predicted.push_back(model.probe.predict(img, res));
      real_pred.push_back(model.probe.predict(real_img, res));
      cond.push_back(s.labels);
      if (options.log && (j + 1) % 25 == 0) *options.log << "evaluate: sampled " << j + 1 << "/" << n << std::endl;
    }
    r.generation_samples = n;
    if (n > model.probe.dim()) r.fd = frechet_distance(real, fake);
    if (n >= 2) r.kd = kernel_distance(real, fake);
    if (n > options.prdc_k) r.prdc = prdc(real, fake, options.prdc_k);
    r.alignment = label_agreement(predicted, cond);
    r.alignment_real = label_agreement(real_pred, cond);
    std::vector<Labels> shifted(n);
    for (std::size_t j = 0; j < n; ++j) shifted[j] = cond[(j + 1) % n];
    r.alignment_chance = label_agreement(predicted, shifted);
    for (std::size_t k = 0; k < kNumFindings; ++k) {
      FeatureSet rk, fk;
      for (std::size_t j = 0; j < n; ++j)
        if (cond[j][k]) {
          rk.push_back(real[j]);
          fk.push_back(fake[j]);
        }
      r.count_per_finding[k] = rk.size();
      r.fd_per_finding[k] = rk.size() > model.probe.dim() ? frechet_distance(rk, fk) : MetricReport::kNa;
    }
  }
  return r;
}

KeyValues metric_report_kv(const MetricReport& r) {
  KeyValues kv = {{"format", "duet-metrics-1"},
                  {"probe_hash", r.probe_hash},
                  {"samples.understanding", std::to_string(r.understanding_samples)},
                  {"samples.generation", std::to_string(r.generation_samples)}};
  if (r.understanding_samples > 0) {
    add_f1(kv, "f1.uncertain_negative", r.f1_negative);
    add_f1(kv, "f1.uncertain_positive", r.f1_positive);
    add_f1(kv, "f1.all_negative_baseline", r.f1_all_negative_baseline);
    for (std::size_t k = 0; k < kNumFindings; ++k)
      kv.emplace_back("f1.per_finding." + std::string(finding_name(k)), num(r.f1_negative.per_finding[k]));
  }
  if (r.generation_samples > 0) {
    kv.emplace_back("resolution", std::to_string(r.resolution));
    kv.emplace_back("fd", num(r.fd));
    kv.emplace_back("kd", num(r.kd));
    kv.emplace_back("alignment", num(r.alignment));
    kv.emplace_back("alignment.chance", num(r.alignment_chance));
    kv.emplace_back("alignment.real_images", num(r.alignment_real));
    kv.emplace_back("precision", num(r.prdc.precision));
    kv.emplace_back("recall", num(r.prdc.recall));
    kv.emplace_back("density", num(r.prdc.density));
    kv.emplace_back("coverage", num(r.prdc.coverage));
    for (std::size_t k = 0; k < kNumFindings; ++k) {
      const std::string name(finding_name(k));
      kv.emplace_back("fd.per_finding." + name, num(r.fd_per_finding[k]));
      kv.emplace_back("count.per_finding." + name, std::to_string(r.count_per_finding[k]));
    }
  }
  return kv;
}

}  // namespace duet
