#include "ivfalign/policy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "ivfalign/error.hpp"
#include "ivfalign/lexicon.hpp"
#include "ivfalign/random.hpp"

namespace ivfalign {
namespace {

struct NumericField {
  const char* name;
  double PatientRecord::*member;
  std::array<double, 4> edges;
  int edge_count;
};

// Bin edges line up with the decision-table thresholds.
constexpr std::array<NumericField, 7> kNumericFields{{
    {"age", &PatientRecord::age, {30, 35, 38, 40}, 4},
    {"cycle", &PatientRecord::cycle_days, {21, 36, 0, 0}, 2},
    {"weight", &PatientRecord::weight_kg, {50, 60, 70, 80}, 4},
    {"bmi", &PatientRecord::bmi, {18.5, 24, 28, 0}, 3},
    {"amh", &PatientRecord::amh, {0.5, 1.1, 2.0, 4.5}, 4},
    {"fsh", &PatientRecord::fsh, {10, 15, 0, 0}, 2},
    {"years", &PatientRecord::infertility_years, {2, 5, 0, 0}, 2},
}};

constexpr std::array<std::string_view, 4> kCotMarkers{"[cot-dx]", "[cot-art]", "[cot-cos]",
                                                      "[cot-gn]"};
constexpr std::string_view kSectionPrefix[] = {"why-dx:", "why-art:", "why-cos:", "why-gn:"};

constexpr int kDoseMin = 75;
constexpr int kDoseMax = 300;
constexpr int kDoseStep = 25;

int bin_of(const NumericField& f, double v) {
  int b = 0;
  for (int i = 0; i < f.edge_count; ++i) {
    if (v >= f.edges[static_cast<std::size_t>(i)]) b = i + 1;
  }
  return b;
}

std::string bin_symbol(const NumericField& f, int bin) {
  return std::string(f.name) + "#" + std::to_string(bin);
}

int quantize_dose(int iu) {
  const int clamped = std::clamp(iu, kDoseMin, kDoseMax);
  return kDoseMin + kDoseStep * static_cast<int>(std::lround(
                                    static_cast<double>(clamped - kDoseMin) / kDoseStep));
}

}  // namespace

// ---------------------------------------------------------------- vocabulary

Vocab::Vocab() {
  pad_ = add("<pad>");
  bos_ = add("<bos>");
  eos_ = add("<eos>");
  answer_ = add("<ans>");
  for (const auto& f : kNumericFields) {
    add(std::string("[") + f.name + "]");
    for (int b = 0; b <= f.edge_count; ++b) add(bin_symbol(f, b));
  }
  add("[us]");
  add("[hx]");
  for (const auto& info : lexicon::findings()) add("find:" + std::string(info.phrase));

  icl_instruction_ = add("<icl-instruction>");
  for (auto topic : {lexicon::GuidelineTopic::Art, lexicon::GuidelineTopic::Cos}) {
    const std::string t = topic == lexicon::GuidelineTopic::Art ? "art" : "cos";
    add("[guide-" + t + "]");
    for (std::size_t i = 0; i < lexicon::guideline_lines(topic).size(); ++i) {
      add("guide-" + t + ":" + std::to_string(i));
    }
  }
  add("guide:unknown");

  for (auto m : kCotMarkers) add(std::string(m));
  for (auto m : {"[it]", "[dx]", "[art]", "[cos]", "[gn]"}) add(m);
  for (std::size_t s = 0; s < lexicon::kCotSections.size(); ++s) {
    for (auto atom : lexicon::reasoning_atoms(lexicon::kCotSections[s])) {
      add(std::string(kSectionPrefix[s]) + std::string(atom));
    }
  }
  for (auto d : lexicon::diagnoses()) add("dx:" + std::string(d));
  for (auto v : kInfertilityTypes) add("it:" + std::string(to_string(v)));
  for (auto v : kArtStrategies) add("art:" + std::string(to_string(v)));
  for (auto v : kCosRegimens) add("cos:" + std::string(to_string(v)));
  for (int d = kDoseMin; d <= kDoseMax; d += kDoseStep) add("gn:" + std::to_string(d));
}

TokenId Vocab::add(std::string symbol) {
  const auto id = static_cast<TokenId>(symbols_.size());
  index_.emplace(symbol, id);
  symbols_.push_back(std::move(symbol));
  return id;
}

const Vocab& Vocab::standard() {
  static const Vocab vocab;
  return vocab;
}

std::optional<TokenId> Vocab::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id(std::string_view symbol) const {
  auto found = find(symbol);
  if (!found) throw ValidationError("unknown token symbol '" + std::string(symbol) + "'");
  return *found;
}

std::string_view Vocab::symbol(TokenId id) const {
  if (id < 0 || id >= size()) throw ValidationError("token index out of range");
  return symbols_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocab::fingerprint() const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& s : symbols_) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 1099511628211ULL;
    }
    h ^= 0xFF;
    h *= 1099511628211ULL;
  }
  return h;
}

// ---------------------------------------------------------------- encoding

std::vector<TokenId> encode_prompt(const PatientRecord& record) {
  const Vocab& v = Vocab::standard();
  std::vector<TokenId> out{v.bos()};
  for (const auto& f : kNumericFields) {
    out.push_back(v.id(std::string("[") + f.name + "]"));
    out.push_back(v.id(bin_symbol(f, bin_of(f, record.*(f.member)))));
  }
  out.push_back(v.id("[us]"));
  for (auto f : lexicon::detect_findings(record.ultrasound_text)) {
    out.push_back(v.id("find:" + std::string(lexicon::phrase(f))));
  }
  out.push_back(v.id("[hx]"));
  for (auto f : lexicon::detect_findings(record.history_text)) {
    out.push_back(v.id("find:" + std::string(lexicon::phrase(f))));
  }
  out.push_back(v.answer());
  return out;
}

std::vector<TokenId> encode_completion(const DecisionBundle& b) {
  const Vocab& v = Vocab::standard();
  std::vector<TokenId> out;
  const std::string* sections[] = {&b.cot.diagnosis_reasoning, &b.cot.art_decision,
                                   &b.cot.cos_selection, &b.cot.gn_rationale};
  for (std::size_t s = 0; s < 4; ++s) {
    out.push_back(v.id(kCotMarkers[s]));
    for (const auto& atom : lexicon::split_atoms(*sections[s])) {
      if (auto id = v.find(std::string(kSectionPrefix[s]) + atom)) out.push_back(*id);
    }
  }
  out.push_back(v.id("[it]"));
  out.push_back(v.id("it:" + std::string(to_string(b.infertility_type))));
  out.push_back(v.id("[dx]"));
  for (const auto& d : b.initial_diagnosis) {
    if (auto id = v.find("dx:" + normalize_diagnosis(d))) out.push_back(*id);
  }
  out.push_back(v.id("[art]"));
  out.push_back(v.id("art:" + std::string(to_string(b.art))));
  out.push_back(v.id("[cos]"));
  out.push_back(v.id("cos:" + std::string(to_string(b.cos))));
  out.push_back(v.id("[gn]"));
  out.push_back(v.id("gn:" + std::to_string(quantize_dose(b.gn_dose.iu))));
  out.push_back(v.eos());
  return out;
}

TokenSeq encode(const PatientRecord& record, const DecisionBundle* bundle) {
  TokenSeq seq;
  seq.prompt = encode_prompt(record);
  if (bundle) seq.completion = encode_completion(*bundle);
  return seq;
}

std::optional<DecisionBundle> decode(std::span<const TokenId> completion) {
  const Vocab& v = Vocab::standard();
  std::size_t i = 0;
  auto sym = [&](std::size_t k) -> std::string_view {
    if (k >= completion.size() || completion[k] < 0 || completion[k] >= v.size()) return {};
    return v.symbol(completion[k]);
  };
  auto expect = [&](std::string_view s) {
    if (sym(i) != s) return false;
    ++i;
    return true;
  };
  auto label = [&](std::string_view pfx) -> std::optional<std::string> {
    std::string_view s = sym(i);
    if (!s.starts_with(pfx)) return std::nullopt;
    ++i;
    return std::string(s.substr(pfx.size()));
  };

  DecisionBundle b;
  std::string* sections[] = {&b.cot.diagnosis_reasoning, &b.cot.art_decision,
                             &b.cot.cos_selection, &b.cot.gn_rationale};
  for (std::size_t s = 0; s < 4; ++s) {
    if (!expect(kCotMarkers[s])) return std::nullopt;
    std::vector<std::string> atoms;
    while (auto atom = label(kSectionPrefix[s])) atoms.push_back(*atom);
    *sections[s] = lexicon::join_atoms(atoms);
  }
  try {
    if (!expect("[it]")) return std::nullopt;
    auto it = label("it:");
    if (!it) return std::nullopt;
    b.infertility_type = parse_infertility_type(*it);
    if (!expect("[dx]")) return std::nullopt;
    while (auto d = label("dx:")) b.initial_diagnosis.push_back(*d);
    if (b.initial_diagnosis.empty()) return std::nullopt;
    if (!expect("[art]")) return std::nullopt;
    auto art = label("art:");
    if (!art) return std::nullopt;
    b.art = parse_art_strategy(*art);
    if (!expect("[cos]")) return std::nullopt;
    auto cos = label("cos:");
    if (!cos) return std::nullopt;
    b.cos = parse_cos_regimen(*cos);
    if (!expect("[gn]")) return std::nullopt;
    auto gn = label("gn:");
    if (!gn) return std::nullopt;
    b.gn_dose = GnDose{std::stoi(*gn)};
  } catch (const ValidationError&) {
    return std::nullopt;
  }
  if (i + 1 != completion.size() || completion[i] != v.eos()) return std::nullopt;
  return b;
}

std::string render_tokens(std::span<const TokenId> tokens) {
  const Vocab& v = Vocab::standard();
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    out += (tokens[i] >= 0 && tokens[i] < v.size()) ? std::string(v.symbol(tokens[i])) : "<?>";
  }
  return out;
}

// ---------------------------------------------------------------- parameters

std::size_t PolicyShape::param_count() const {
  const auto V = static_cast<std::size_t>(vocab);
  const auto E = static_cast<std::size_t>(embed);
  const auto H = static_cast<std::size_t>(hidden);
  const auto D = static_cast<std::size_t>(input_dim());
  return 2 * V * E + H * D + H + V * H + V;
}

PolicyShape standard_shape() {
  PolicyShape s;
  s.vocab = Vocab::standard().size();
  return s;
}

PolicyParams::PolicyParams(PolicyShape shape) : shape_(shape), data_(shape.param_count(), 0.0) {
  if (shape.vocab <= 0 || shape.embed <= 0 || shape.window <= 0 || shape.hidden <= 0) {
    throw ValidationError("policy dimensions must be positive");
  }
}

std::array<std::size_t, 7> PolicyParams::offsets() const {
  const auto V = static_cast<std::size_t>(shape_.vocab);
  const auto E = static_cast<std::size_t>(shape_.embed);
  const auto H = static_cast<std::size_t>(shape_.hidden);
  const auto D = static_cast<std::size_t>(shape_.input_dim());
  std::array<std::size_t, 7> o{};
  o[1] = o[0] + V * E;
  o[2] = o[1] + V * E;
  o[3] = o[2] + H * D;
  o[4] = o[3] + H;
  o[5] = o[4] + V * H;
  o[6] = o[5] + V;
  return o;
}

std::span<const double> PolicyParams::block(int i) const {
  const auto o = offsets();
  const auto k = static_cast<std::size_t>(i);
  return std::span<const double>(data_).subspan(o[k], o[k + 1] - o[k]);
}

bool PolicyParams::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
}

PolicyParams zero_params(PolicyShape shape) { return PolicyParams(shape); }

PolicyParams random_params(std::uint64_t seed, PolicyShape shape) {
  PolicyParams p(shape);
  Rng rng(seed);
  const auto o = p.offsets();
  auto d = p.data();
  const double w1_scale = 1.0 / std::sqrt(static_cast<double>(shape.input_dim()));
  const double w2_scale = 0.5 / std::sqrt(static_cast<double>(shape.hidden));
  for (std::size_t i = o[0]; i < o[2]; ++i) d[i] = 0.5 * normal01(rng);
  for (std::size_t i = o[2]; i < o[3]; ++i) d[i] = w1_scale * normal01(rng);
  for (std::size_t i = o[4]; i < o[5]; ++i) d[i] = w2_scale * normal01(rng);
  return p;
}

double max_abs_diff(const PolicyParams& a, const PolicyParams& b) {
  if (!(a.shape() == b.shape())) throw ValidationError("parameter shapes differ");
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

// ---------------------------------------------------------------- forward / backward

namespace {

struct Views {
  const double* tok;
  const double* pemb;
  const double* w1;
  const double* b1;
  const double* w2;
  const double* b2;
  int V, E, K, H, D;

  explicit Views(const PolicyParams& p) {
    const auto o = p.offsets();
    const double* base = p.data().data();
    tok = base + o[0];
    pemb = base + o[1];
    w1 = base + o[2];
    b1 = base + o[3];
    w2 = base + o[4];
    b2 = base + o[5];
    V = p.shape().vocab;
    E = p.shape().embed;
    K = p.shape().window;
    H = p.shape().hidden;
    D = p.shape().input_dim();
  }
};

void check_tokens(std::span<const TokenId> tokens, int V) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] < 0 || tokens[i] >= V) {
      throw ValidationError("token index " + std::to_string(tokens[i]) + " at position " +
                            std::to_string(i) + " outside vocabulary of size " +
                            std::to_string(V));
    }
  }
}

std::vector<double> prompt_pool(const Views& w, std::span<const TokenId> prompt) {
  std::vector<double> pool(static_cast<std::size_t>(w.E), 0.0);
  if (prompt.empty()) return pool;
  for (TokenId t : prompt) {
    const double* row = w.pemb + static_cast<std::size_t>(t) * w.E;
    for (int e = 0; e < w.E; ++e) pool[static_cast<std::size_t>(e)] += row[e];
  }
  const double inv = 1.0 / static_cast<double>(prompt.size());
  for (double& x : pool) x *= inv;
  return pool;
}

// Builds the input vector for the position whose window ends just before
// `end` in the concatenated sequence.
void build_input(const Views& w, std::span<const TokenId> prompt,
                 std::span<const TokenId> completion, std::size_t end,
                 std::span<const double> pool, TokenId pad, double* x) {
  for (int k = 0; k < w.K; ++k) {
    const auto back = static_cast<std::ptrdiff_t>(w.K - k);
    const auto pos = static_cast<std::ptrdiff_t>(end) - back;
    TokenId tok = pad;
    if (pos >= 0) {
      const auto upos = static_cast<std::size_t>(pos);
      tok = upos < prompt.size() ? prompt[upos] : completion[upos - prompt.size()];
    }
    std::memcpy(x + static_cast<std::size_t>(k) * w.E, w.tok + static_cast<std::size_t>(tok) * w.E,
                sizeof(double) * static_cast<std::size_t>(w.E));
  }
  std::memcpy(x + static_cast<std::size_t>(w.K) * w.E, pool.data(),
              sizeof(double) * static_cast<std::size_t>(w.E));
}

TokenId window_token(std::span<const TokenId> prompt, std::span<const TokenId> completion,
                     std::size_t end, int k, int K, TokenId pad) {
  const auto pos = static_cast<std::ptrdiff_t>(end) - static_cast<std::ptrdiff_t>(K - k);
  if (pos < 0) return pad;
  const auto upos = static_cast<std::size_t>(pos);
  return upos < prompt.size() ? prompt[upos] : completion[upos - prompt.size()];
}

void hidden_and_logits(const Views& w, const double* x, double* h, double* z) {
  for (int j = 0; j < w.H; ++j) {
    const double* row = w.w1 + static_cast<std::size_t>(j) * w.D;
    double a = w.b1[j];
    for (int d = 0; d < w.D; ++d) a += row[d] * x[d];
    h[j] = std::tanh(a);
  }
  for (int v = 0; v < w.V; ++v) {
    const double* row = w.w2 + static_cast<std::size_t>(v) * w.H;
    double s = w.b2[v];
    for (int j = 0; j < w.H; ++j) s += row[j] * h[j];
    z[v] = s;
  }
}

void log_softmax_inplace(double* z, int V) {
  double m = -std::numeric_limits<double>::infinity();
  for (int v = 0; v < V; ++v) m = std::max(m, z[v]);
  double s = 0;
  for (int v = 0; v < V; ++v) s += std::exp(z[v] - m);
  const double lse = m + std::log(s);
  for (int v = 0; v < V; ++v) z[v] -= lse;
}

struct Forward {
  std::vector<double> pool;
  std::vector<double> x;     // T x D
  std::vector<double> h;     // T x H
  std::vector<double> logp;  // T x V
};

Forward forward(const Views& w, const TokenSeq& seq) {
  check_tokens(seq.prompt, w.V);
  check_tokens(seq.completion, w.V);
  const std::size_t T = seq.completion.size();
  const TokenId pad = Vocab::standard().pad();
  Forward f;
  f.pool = prompt_pool(w, seq.prompt);
  f.x.resize(T * static_cast<std::size_t>(w.D));
  f.h.resize(T * static_cast<std::size_t>(w.H));
  f.logp.resize(T * static_cast<std::size_t>(w.V));
  for (std::size_t t = 0; t < T; ++t) {
    double* x = f.x.data() + t * static_cast<std::size_t>(w.D);
    build_input(w, seq.prompt, seq.completion, seq.prompt.size() + t, f.pool, pad, x);
    double* z = f.logp.data() + t * static_cast<std::size_t>(w.V);
    hidden_and_logits(w, x, f.h.data() + t * static_cast<std::size_t>(w.H), z);
    log_softmax_inplace(z, w.V);
  }
  return f;
}

void backward(const Views& w, const TokenSeq& seq, const Forward& f,
              std::span<const double> dlogits, std::span<double> grad,
              const std::array<std::size_t, 7>& o) {
  const std::size_t T = seq.completion.size();
  const TokenId pad = Vocab::standard().pad();
  double* g_tok = grad.data() + o[0];
  double* g_pemb = grad.data() + o[1];
  double* g_w1 = grad.data() + o[2];
  double* g_b1 = grad.data() + o[3];
  double* g_w2 = grad.data() + o[4];
  double* g_b2 = grad.data() + o[5];

  std::vector<double> dh(static_cast<std::size_t>(w.H));
  std::vector<double> dx(static_cast<std::size_t>(w.D));
  std::vector<double> dpool(static_cast<std::size_t>(w.E), 0.0);
  for (std::size_t t = 0; t < T; ++t) {
    const double* dz = dlogits.data() + t * static_cast<std::size_t>(w.V);
    const double* h = f.h.data() + t * static_cast<std::size_t>(w.H);
    const double* x = f.x.data() + t * static_cast<std::size_t>(w.D);
    std::fill(dh.begin(), dh.end(), 0.0);
    for (int v = 0; v < w.V; ++v) {
      const double g = dz[v];
      if (g == 0.0) continue;
      g_b2[v] += g;
      double* gw = g_w2 + static_cast<std::size_t>(v) * w.H;
      const double* wr = w.w2 + static_cast<std::size_t>(v) * w.H;
      for (int j = 0; j < w.H; ++j) {
        gw[j] += g * h[j];
        dh[static_cast<std::size_t>(j)] += g * wr[j];
      }
    }
    std::fill(dx.begin(), dx.end(), 0.0);
    for (int j = 0; j < w.H; ++j) {
      const double da = dh[static_cast<std::size_t>(j)] * (1.0 - h[j] * h[j]);
      if (da == 0.0) continue;
      g_b1[j] += da;
      double* gw = g_w1 + static_cast<std::size_t>(j) * w.D;
      const double* wr = w.w1 + static_cast<std::size_t>(j) * w.D;
      for (int d = 0; d < w.D; ++d) {
        gw[d] += da * x[d];
        dx[static_cast<std::size_t>(d)] += da * wr[d];
      }
    }
    const std::size_t end = seq.prompt.size() + t;
    for (int k = 0; k < w.K; ++k) {
      const TokenId tok = window_token(seq.prompt, seq.completion, end, k, w.K, pad);
      double* g = g_tok + static_cast<std::size_t>(tok) * w.E;
      const double* src = dx.data() + static_cast<std::size_t>(k) * w.E;
      for (int e = 0; e < w.E; ++e) g[e] += src[e];
    }
    const double* src = dx.data() + static_cast<std::size_t>(w.K) * w.E;
    for (int e = 0; e < w.E; ++e) dpool[static_cast<std::size_t>(e)] += src[e];
  }
  if (!seq.prompt.empty()) {
    const double inv = 1.0 / static_cast<double>(seq.prompt.size());
    for (TokenId tok : seq.prompt) {
      double* g = g_pemb + static_cast<std::size_t>(tok) * w.E;
      for (int e = 0; e < w.E; ++e) g[e] += dpool[static_cast<std::size_t>(e)] * inv;
    }
  }
}

}  // namespace

std::vector<double> logprobs(const PolicyParams& params, const TokenSeq& seq) {
  const Views w(params);
  const Forward f = forward(w, seq);
  std::vector<double> out(seq.completion.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    out[t] = f.logp[t * static_cast<std::size_t>(w.V) +
                    static_cast<std::size_t>(seq.completion[t])];
  }
  return out;
}

double sequence_logprob(const PolicyParams& params, const TokenSeq& seq) {
  const auto lp = logprobs(params, seq);
  return std::accumulate(lp.begin(), lp.end(), 0.0);
}

Distributions distributions(const PolicyParams& params, const TokenSeq& seq) {
  const Views w(params);
  Forward f = forward(w, seq);
  return Distributions{w.V, std::move(f.logp)};
}

void accumulate_logprob_grad(const PolicyParams& params, const TokenSeq& seq,
                             std::span<const double> coeffs, std::span<double> grad) {
  if (coeffs.size() != seq.completion.size()) {
    throw ValidationError("coefficient count must match completion length");
  }
  if (grad.size() != params.size()) throw ValidationError("gradient buffer has wrong size");
  const Views w(params);
  const Forward f = forward(w, seq);
  std::vector<double> dz(f.logp.size());
  const auto V = static_cast<std::size_t>(w.V);
  for (std::size_t t = 0; t < seq.completion.size(); ++t) {
    const double c = coeffs[t];
    double* row = dz.data() + t * V;
    const double* lp = f.logp.data() + t * V;
    for (std::size_t v = 0; v < V; ++v) row[v] = -c * std::exp(lp[v]);
    row[static_cast<std::size_t>(seq.completion[t])] += c;
  }
  backward(w, seq, f, dz, grad, params.offsets());
}

void accumulate_logit_grad(const PolicyParams& params, const TokenSeq& seq,
                           std::span<const double> dlogits, std::span<double> grad) {
  const Views w(params);
  if (dlogits.size() != seq.completion.size() * static_cast<std::size_t>(w.V)) {
    throw ValidationError("logit gradient has wrong size");
  }
  if (grad.size() != params.size()) throw ValidationError("gradient buffer has wrong size");
  const Forward f = forward(w, seq);
  backward(w, seq, f, dlogits, grad, params.offsets());
}

// ---------------------------------------------------------------- sampling

namespace {

template <typename Pick>
std::vector<TokenId> rollout(const Views& w, std::span<const TokenId> prompt, std::size_t max_len,
                             Pick&& pick) {
  check_tokens(prompt, w.V);
  const TokenId pad = Vocab::standard().pad();
  const TokenId eos = Vocab::standard().eos();
  const auto pool = prompt_pool(w, prompt);
  std::vector<double> x(static_cast<std::size_t>(w.D));
  std::vector<double> h(static_cast<std::size_t>(w.H));
  std::vector<double> z(static_cast<std::size_t>(w.V));
  std::vector<TokenId> out;
  while (out.size() < max_len) {
    build_input(w, prompt, out, prompt.size() + out.size(), pool, pad, x.data());
    hidden_and_logits(w, x.data(), h.data(), z.data());
    const TokenId next = pick(z);
    out.push_back(next);
    if (next == eos) break;
  }
  return out;
}

TokenId argmax(const std::vector<double>& z) {
  return static_cast<TokenId>(std::max_element(z.begin(), z.end()) - z.begin());
}

}  // namespace

std::vector<std::vector<TokenId>> sample_group(const PolicyParams& params,
                                               std::span<const TokenId> prompt, int group_size,
                                               double temperature, std::uint64_t seed,
                                               std::size_t max_len) {
  if (group_size < 2) throw ValidationError("group size must be at least 2");
  if (!(temperature > 0)) throw ValidationError("temperature must be positive");
  const Views w(params);
  std::vector<std::vector<TokenId>> out;
  out.reserve(static_cast<std::size_t>(group_size));
  std::vector<double> probs(static_cast<std::size_t>(w.V));
  for (int g = 0; g < group_size; ++g) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(g)));
    out.push_back(rollout(w, prompt, max_len, [&](const std::vector<double>& z) {
      const double m = *std::max_element(z.begin(), z.end());
      for (std::size_t v = 0; v < z.size(); ++v) probs[v] = std::exp((z[v] - m) / temperature);
      return static_cast<TokenId>(categorical(rng, probs));
    }));
  }
  return out;
}

std::vector<TokenId> greedy_decode(const PolicyParams& params, std::span<const TokenId> prompt,
                                   std::size_t max_len) {
  const Views w(params);
  return rollout(w, prompt, max_len, argmax);
}

// ---------------------------------------------------------------- gradient check

GradCheckReport grad_check(const LossFn& loss, const PolicyParams& params, double tol,
                           std::uint64_t seed, double fraction, double h) {
  std::vector<double> analytic(params.size(), 0.0);
  const double base = loss(params, &analytic);
  if (!std::isfinite(base)) throw ValidationError("loss is not finite at the check point");

  const std::size_t n = params.size();
  const std::size_t count =
      std::min(n, std::max<std::size_t>(1, static_cast<std::size_t>(fraction * static_cast<double>(n))));
  std::vector<std::size_t> coords(n);
  std::iota(coords.begin(), coords.end(), 0);
  Rng rng(seed);
  shuffle(std::span(coords), rng);
  coords.resize(count);
  std::sort(coords.begin(), coords.end());

  GradCheckReport report;
  PolicyParams probe = params;
  for (std::size_t i : coords) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + h;
    const double up = loss(probe, nullptr);
    probe.data()[i] = orig - h;
    const double down = loss(probe, nullptr);
    probe.data()[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw ValidationError("loss is not finite near coordinate " + std::to_string(i));
    }
    const double numeric = (up - down) / (2 * h);
    const double abs_err = std::abs(analytic[i] - numeric);
    const double rel =
        abs_err / std::max({std::abs(analytic[i]), std::abs(numeric), 1e-4});
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = i;
    }
    report.max_abs_error = std::max(report.max_abs_error, abs_err);
  }
  report.coords_checked = coords.size();
  report.passed = report.max_rel_error < tol;
  return report;
}

// ---------------------------------------------------------------- checkpoints

namespace {

constexpr char kMagic[8] = {'I', 'V', 'F', 'P', 'O', 'L', '0', '1'};
constexpr std::uint32_t kCheckpointVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    out.write(bytes.data(), sizeof(T));
  } else {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
  }
}

template <typename T>
T get(std::istream& in) {
  std::array<char, sizeof(T)> bytes{};
  in.read(bytes.data(), sizeof(T));
  if (!in) throw ValidationError("checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

}  // namespace

void save_checkpoint(const PolicyParams& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint '" + path.string() + "'");
  out.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  const auto& s = params.shape();
  put<std::int32_t>(out, s.vocab);
  put<std::int32_t>(out, s.embed);
  put<std::int32_t>(out, s.window);
  put<std::int32_t>(out, s.hidden);
  put<std::uint64_t>(out, Vocab::standard().fingerprint());
  put<std::uint64_t>(out, params.size());
  for (double v : params.data()) put<double>(out, v);
  out.flush();
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

PolicyParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path.string() + "'");
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || !std::equal(magic, magic + 8, kMagic)) {
    throw ValidationError("'" + path.string() + "' is not a policy checkpoint");
  }
  if (get<std::uint32_t>(in) != kCheckpointVersion) {
    throw ValidationError("unsupported checkpoint version");
  }
  PolicyShape s;
  s.vocab = get<std::int32_t>(in);
  s.embed = get<std::int32_t>(in);
  s.window = get<std::int32_t>(in);
  s.hidden = get<std::int32_t>(in);
  if (get<std::uint64_t>(in) != Vocab::standard().fingerprint() ||
      s.vocab != Vocab::standard().size()) {
    throw ValidationError("checkpoint vocabulary does not match this build");
  }
  PolicyParams p(s);
  if (get<std::uint64_t>(in) != p.size()) throw ValidationError("checkpoint size mismatch");
  for (double& v : p.data()) v = get<double>(in);
  return p;
}

}  // namespace ivfalign
