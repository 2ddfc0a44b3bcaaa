#include "duet/synthetic.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <regex>
#include <sstream>
#include <stdexcept>

#include "duet/image_io.hpp"

namespace duet {

namespace {

constexpr std::array<std::string_view, kNumFindings> kPhrases = {"left opacity", "right opacity", "ring",
                                                                 "band",         "gradient",      "speckle"};
constexpr std::array<std::string_view, kNumFindings> kNames = {"left_opacity", "right_opacity", "ring",
                                                               "band",         "gradient",      "speckle"};

constexpr double kBackground = 0.08;
constexpr std::size_t kSpeckleDots = 10;

struct Dot {
  double u, v;
};

std::vector<Dot> speckle_dots(std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x5bec));
  std::vector<Dot> dots(kSpeckleDots);
  for (auto& d : dots) {
    d.u = 0.2 + 0.6 * rng.uniform();
    d.v = 0.2 + 0.6 * rng.uniform();
  }
  return dots;
}

double gauss(double d2, double sigma) { return std::exp(-d2 / (2.0 * sigma * sigma)); }

double opacity_center_v(int location) { return location == 0 ? 0.3 : 0.7; }
double band_center_v(int location) { return location == 0 ? 0.1 : 0.9; }

bool in_region(std::size_t k, const FindingSpec& f, const std::vector<Dot>& dots, double u, double v) {
  switch (static_cast<Finding>(k)) {
    case Finding::left_opacity: return u < 0.5 && std::abs(v - opacity_center_v(f.location)) < 0.25;
    case Finding::right_opacity: return u >= 0.5 && std::abs(v - opacity_center_v(f.location)) < 0.25;
    case Finding::ring: {
      const double r = std::hypot(u - 0.5, v - 0.5);
      return std::abs(r - 0.22) < 0.08;
    }
    case Finding::band: return std::abs(v - band_center_v(f.location)) < 0.08;
    case Finding::gradient: return v > 0.42 && v < 0.58;
    case Finding::speckle:
      for (const auto& d : dots)
        if ((u - d.u) * (u - d.u) + (v - d.v) * (v - d.v) < 0.06 * 0.06) return true;
      return false;
  }
  return false;
}

double contribution(std::size_t k, const FindingSpec& f, const std::vector<Dot>& dots, double u, double v) {
  if (!in_region(k, f, dots, u, v)) return 0.0;
  const double amp = kSeverityAmplitude[static_cast<std::size_t>(f.severity)];
  switch (static_cast<Finding>(k)) {
    case Finding::left_opacity: {
      const double dv = v - opacity_center_v(f.location);
      return amp * gauss((u - 0.28) * (u - 0.28) + dv * dv, 0.09);
    }
    case Finding::right_opacity: {
      const double dv = v - opacity_center_v(f.location);
      return amp * gauss((u - 0.72) * (u - 0.72) + dv * dv, 0.09);
    }
    case Finding::ring: {
      const double dr = std::hypot(u - 0.5, v - 0.5) - 0.22;
      return amp * gauss(dr * dr, 0.03);
    }
    case Finding::band: {
      const double dv = v - band_center_v(f.location);
      return amp * gauss(dv * dv, 0.03);
    }
    case Finding::gradient: return amp * (f.location == 0 ? 1.0 - u : u);
    case Finding::speckle: {
      double acc = 0.0;
      for (const auto& d : dots) acc += gauss((u - d.u) * (u - d.u) + (v - d.v) * (v - d.v), 0.02);
      return amp * std::min(acc, 1.0);
    }
  }
  return 0.0;
}

std::vector<std::string> split_words(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::vector<std::string> words;
  for (std::string w; in >> w;) words.push_back(w);
  return words;
}

std::vector<std::vector<std::string>> split_sentences(std::string_view text) {
  std::vector<std::vector<std::string>> out(1);
  for (auto& w : split_words(text)) {
    if (w == ".") {
      if (!out.back().empty()) out.emplace_back();
    } else {
      out.back().push_back(std::move(w));
    }
  }
  if (out.back().empty()) out.pop_back();
  return out;
}

bool contains_phrase(const std::vector<std::string>& sentence, std::size_t k) {
  const auto phrase = split_words(kPhrases[k]);
  if (phrase.size() > sentence.size()) return false;
  for (std::size_t i = 0; i + phrase.size() <= sentence.size(); ++i)
    if (std::equal(phrase.begin(), phrase.end(), sentence.begin() + static_cast<std::ptrdiff_t>(i))) return true;
  return false;
}

const std::vector<std::string>& fillers() {
  static const std::vector<std::string> f = {"FINAL REPORT", "please note", "as discussed", "thank you",
                                             "dictated by radiologist"};
  return f;
}

class Fnv {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h_ ^= b[i];
      h_ *= 0x100000001b3ULL;
    }
  }
  void str(const std::string& s) {
    bytes(s.data(), s.size());
    bytes("\0", 1);
  }
  void u64(std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(b, 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  std::uint64_t value() const { return h_; }

 private:
  std::uint64_t h_ = 0xcbf29ce484222325ULL;
};

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string escape_line(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == '\\') out += "\\\\";
    else if (c == '\n') out += "\\n";
    else out += c;
  }
  return out;
}

std::string unescape_line(const std::string& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      out += s[i + 1] == 'n' ? '\n' : s[i + 1];
      ++i;
    } else {
      out += s[i];
    }
  }
  return out;
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

std::string image_name(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%06zu.dimg", i);
  return buf;
}

}  // namespace

std::string_view finding_phrase(std::size_t k) { return kPhrases.at(k); }
std::string_view finding_name(std::size_t k) { return kNames.at(k); }

std::array<std::string_view, 2> finding_locations(std::size_t k) {
  switch (static_cast<Finding>(k)) {
    case Finding::left_opacity:
    case Finding::right_opacity:
    case Finding::band: return {"upper", "lower"};
    case Finding::gradient: return {"left", "right"};
    default: return {"", ""};
  }
}

std::vector<std::size_t> Corpus::train_indices() const {
  std::vector<std::size_t> out;
  for (const auto& s : samples)
    if (!is_test_index(s.index)) out.push_back(s.index);
  return out;
}

std::vector<std::size_t> Corpus::test_indices() const {
  std::vector<std::size_t> out;
  for (const auto& s : samples)
    if (is_test_index(s.index)) out.push_back(s.index);
  return out;
}

SceneSpec sample_scene(const CorpusParams& params, Rng& rng) {
  SceneSpec spec;
  for (std::size_t k = 0; k < kNumFindings; ++k) {
    auto& f = spec.findings[k];
    f.present = rng.bernoulli(params.finding_prob);
    f.severity = static_cast<int>(rng.below(3));
    f.location = finding_locations(k)[0].empty() ? 0 : static_cast<int>(rng.below(2));
  }
  spec.noise_level = params.max_noise * rng.uniform();
  spec.seed = mix_seed(rng.seed(), 0x5eed);
  if (rng.bernoulli(params.hedge_prob)) {
    std::vector<int> absent;
    for (std::size_t k = 0; k < kNumFindings; ++k)
      if (!spec.findings[k].present) absent.push_back(static_cast<int>(k));
    if (!absent.empty()) spec.hedge = absent[rng.below(absent.size())];
  }
  return spec;
}

std::vector<double> render(const SceneSpec& spec, std::size_t resolution) {
  if (resolution < 16) throw std::invalid_argument("render resolution must be at least 16");
  const auto dots = speckle_dots(spec.seed);
  Rng noise(mix_seed(spec.seed, resolution));
  std::vector<double> img(resolution * resolution);
  const double inv = 1.0 / static_cast<double>(resolution);
  for (std::size_t r = 0; r < resolution; ++r)
    for (std::size_t c = 0; c < resolution; ++c) {
      const double u = (static_cast<double>(c) + 0.5) * inv, v = (static_cast<double>(r) + 0.5) * inv;
      double p = kBackground;
      for (std::size_t k = 0; k < kNumFindings; ++k)
        if (spec.findings[k].present) p += contribution(k, spec.findings[k], dots, u, v);
      p += spec.noise_level * noise.normal();
      img[r * resolution + c] = std::clamp(p, 0.0, 1.0);
    }
  return img;
}

std::vector<std::uint8_t> finding_region(const SceneSpec& spec, std::size_t k, std::size_t resolution) {
  const auto dots = speckle_dots(spec.seed);
  std::vector<std::uint8_t> mask(resolution * resolution);
  const double inv = 1.0 / static_cast<double>(resolution);
  for (std::size_t r = 0; r < resolution; ++r)
    for (std::size_t c = 0; c < resolution; ++c)
      mask[r * resolution + c] =
          in_region(k, spec.findings[k], dots, (static_cast<double>(c) + 0.5) * inv, (static_cast<double>(r) + 0.5) * inv);
  return mask;
}

Labels scene_labels(const SceneSpec& spec) {
  Labels l{};
  for (std::size_t k = 0; k < kNumFindings; ++k) l[k] = spec.findings[k].present ? 1 : 0;
  return l;
}

std::string templated_report(const SceneSpec& spec) {
  std::string out;
  auto sentence = [&out](const std::string& s) {
    if (!out.empty()) out += ' ';
    out += s + " .";
  };
  for (std::size_t k = 0; k < kNumFindings; ++k) {
    const auto& f = spec.findings[k];
    if (!f.present) continue;
    std::string s = std::string(kSeverityWords[static_cast<std::size_t>(f.severity)]) + " " + std::string(kPhrases[k]);
    const auto loc = finding_locations(k)[static_cast<std::size_t>(f.location)];
    if (!loc.empty()) s += " " + std::string(loc);
    sentence(s);
  }
  if (out.empty()) sentence("no acute findings");
  if (spec.hedge >= 0) sentence("possible " + std::string(kPhrases[static_cast<std::size_t>(spec.hedge)]));
  return out;
}

std::string inject_noise(const std::string& clean, Rng& rng) {
  std::vector<std::string> parts;
  if (rng.bernoulli(0.5)) parts.push_back("FINAL REPORT\n");
  if (rng.bernoulli(0.5)) parts.push_back("[ACC " + std::to_string(10000 + rng.below(90000)) + "]\n");
  for (const auto& sent : split_sentences(clean)) {
    if (rng.bernoulli(0.25)) parts.push_back(rng.bernoulli(0.5) ? "please note" : "as discussed");
    std::string s;
    for (const auto& w : sent) s += w + " ";
    parts.push_back(s + ".");
    if (rng.bernoulli(0.3)) parts.push_back(std::string(2 + rng.below(5), '_'));
  }
  if (rng.bernoulli(0.3)) parts.push_back("\n[signed " + std::to_string(rng.below(24)) + ":" + std::to_string(10 + rng.below(50)) + "]");
  if (rng.bernoulli(0.3)) parts.push_back(rng.bernoulli(0.5) ? "thank you" : "dictated by radiologist");
  std::string out;
  for (const auto& p : parts) {
    if (!out.empty() && out.back() != '\n') out += ' ';
    out += p;
  }
  return out;
}

std::string clean_report(std::string_view noisy) {
  static const std::regex metadata(R"(\[[^\]]*\])");
  static const std::regex underscores("_+");
  static const std::regex spaces(R"(\s+)");
  std::string cur(noisy);
  for (;;) {
    std::string next = std::regex_replace(cur, metadata, " ");
    next = std::regex_replace(next, underscores, " ");
    for (const auto& f : fillers()) {
      for (std::size_t pos; (pos = next.find(f)) != std::string::npos;) next.replace(pos, f.size(), " ");
    }
    next = std::regex_replace(next, spaces, " ");
    const auto b = next.find_first_not_of(' ');
    next = b == std::string::npos ? "" : next.substr(b, next.find_last_not_of(' ') - b + 1);
    if (next == cur) return next;
    cur = std::move(next);
  }
}

Labels extract_labels(std::string_view report, UncertainMode mode) {
  Labels labels{};
  for (const auto& sent : split_sentences(report)) {
    const bool hedged = !sent.empty() && sent.front() == "possible";
    if (hedged && mode == UncertainMode::as_negative) continue;
    for (std::size_t k = 0; k < kNumFindings; ++k)
      if (contains_phrase(sent, k)) labels[k] = 1;
  }
  return labels;
}

SyntheticSample make_sample(const CorpusParams& params, std::size_t index) {
  Rng rng = Rng(params.seed).fork(index);
  SyntheticSample s;
  s.index = index;
  s.spec = sample_scene(params, rng);
  s.resolution = params.resolution;
  s.image = render(s.spec, params.resolution);
  s.clean_report = templated_report(s.spec);
  Rng noise_rng = rng.fork(1);
  s.noisy_report = inject_noise(s.clean_report, noise_rng);
  s.labels = scene_labels(s.spec);
  return s;
}

Corpus gen_corpus(const CorpusParams& params) {
  if (params.n == 0) throw std::invalid_argument("corpus size must be at least 1");
  Corpus c;
  c.params = params;
  c.samples.reserve(params.n);
  for (std::size_t i = 0; i < params.n; ++i) c.samples.push_back(make_sample(params, i));
  return c;
}

bool is_test_index(std::size_t index) { return index % 20 == 0; }

std::string dataset_hash(const Corpus& corpus) {
  Fnv h;
  const auto& p = corpus.params;
  h.u64(p.n);
  h.u64(p.seed);
  h.u64(p.resolution);
  h.f64(p.finding_prob);
  h.f64(p.hedge_prob);
  h.f64(p.max_noise);
  for (const auto& s : corpus.samples) {
    h.str(s.clean_report);
    h.str(s.noisy_report);
    for (int l : s.labels) h.u64(static_cast<std::uint64_t>(l));
    for (double v : s.image) h.f64(v);
  }
  char buf[24];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h.value()));
  return buf;
}

std::string format_labels(const Labels& labels) {
  std::string out;
  for (std::size_t k = 0; k < kNumFindings; ++k) {
    if (k) out += ' ';
    out += std::to_string(labels[k]);
  }
  return out;
}

void save_corpus(const std::filesystem::path& dir, const Corpus& corpus) {
  std::filesystem::create_directories(dir / "images");
  const auto& p = corpus.params;
  {
    std::ofstream m(dir / "manifest.txt");
    m << "format=duet-corpus-1\n"
      << "n=" << p.n << "\n"
      << "seed=" << p.seed << "\n"
      << "resolution=" << p.resolution << "\n"
      << "findings=" << kNumFindings << "\n"
      << "finding_prob=" << fmt_double(p.finding_prob) << "\n"
      << "hedge_prob=" << fmt_double(p.hedge_prob) << "\n"
      << "max_noise=" << fmt_double(p.max_noise) << "\n"
      << "split=index%20==0 is test\n"
      << "dataset_hash=" << dataset_hash(corpus) << "\n";
  }
  std::ofstream scenes(dir / "scenes.txt"), reports(dir / "reports.txt"), noisy(dir / "noisy_reports.txt"),
      labels(dir / "labels.txt");
  for (const auto& s : corpus.samples) {
    scenes << s.spec.seed << ' ' << fmt_double(s.spec.noise_level) << ' ' << s.spec.hedge;
    for (const auto& f : s.spec.findings) scenes << ' ' << (f.present ? 1 : 0) << ',' << f.severity << ',' << f.location;
    scenes << '\n';
    reports << s.clean_report << '\n';
    noisy << escape_line(s.noisy_report) << '\n';
    labels << format_labels(s.labels) << '\n';
    save_image(dir / "images" / image_name(s.index), Image{s.resolution, s.resolution, 1, s.image});
  }
  if (!scenes || !reports || !noisy || !labels) throw std::runtime_error("failed writing corpus to " + dir.string());
}

Corpus load_corpus(const std::filesystem::path& dir) {
  std::map<std::string, std::string> kv;
  for (const auto& line : read_lines(dir / "manifest.txt")) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&kv, &dir](const std::string& key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw std::runtime_error(dir.string() + "/manifest.txt is missing '" + key + "'");
    return it->second;
  };
  if (need("format") != "duet-corpus-1") throw std::runtime_error("unsupported corpus format " + need("format"));
  Corpus c;
  c.params.n = std::stoull(need("n"));
  c.params.seed = std::stoull(need("seed"));
  c.params.resolution = std::stoull(need("resolution"));
  c.params.finding_prob = std::stod(need("finding_prob"));
  c.params.hedge_prob = std::stod(need("hedge_prob"));
  c.params.max_noise = std::stod(need("max_noise"));

  const auto scenes = read_lines(dir / "scenes.txt");
  const auto reports = read_lines(dir / "reports.txt");
  const auto noisy = read_lines(dir / "noisy_reports.txt");
  const auto labels = read_lines(dir / "labels.txt");
  if (scenes.size() != c.params.n || reports.size() != c.params.n || noisy.size() != c.params.n ||
      labels.size() != c.params.n)
    throw std::runtime_error("corpus files in " + dir.string() + " disagree with n=" + std::to_string(c.params.n));
  for (std::size_t i = 0; i < c.params.n; ++i) {
    SyntheticSample s;
    s.index = i;
    std::istringstream in(scenes[i]);
    in >> s.spec.seed >> s.spec.noise_level >> s.spec.hedge;
    for (auto& f : s.spec.findings) {
      std::string tok;
      in >> tok;
      int present = 0;
      if (std::sscanf(tok.c_str(), "%d,%d,%d", &present, &f.severity, &f.location) != 3)
        throw std::runtime_error("malformed scene line " + std::to_string(i + 1));
      f.present = present != 0;
    }
    s.clean_report = reports[i];
    s.noisy_report = unescape_line(noisy[i]);
    std::istringstream lin(labels[i]);
    for (auto& l : s.labels) lin >> l;
    Image img = load_image(dir / "images" / image_name(i));
    if (img.height != c.params.resolution || img.width != c.params.resolution)
      throw std::runtime_error("image " + image_name(i) + " has the wrong size");
    s.resolution = img.height;
    s.image = std::move(img.pixels);
    c.samples.push_back(std::move(s));
  }
  const std::string h = dataset_hash(c);
  if (h != need("dataset_hash"))
    throw std::runtime_error("corpus hash mismatch in " + dir.string() + ": manifest " + need("dataset_hash") + ", content " + h);
  return c;
}

}  // namespace duet
