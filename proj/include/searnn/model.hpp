#pragma once

#include <fstream>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "searnn/autodiff.hpp"
#include "searnn/tensor.hpp"

namespace searnn {

/// Ordered token set; indices are dense in [0, A). Lines 0-2 are reserved
/// for start-of-sequence, end-of-sequence and padding.
class Vocabulary {
 public:
  static constexpr int kSos = 0;
  static constexpr int kEos = 1;
  static constexpr int kPad = 2;
  static constexpr const char* kSosToken = "<s>";
  static constexpr const char* kEosToken = "</s>";
  static constexpr const char* kPadToken = "<pad>";

  Vocabulary() {
    add_unchecked(kSosToken);
    add_unchecked(kEosToken);
    add_unchecked(kPadToken);
  }

  // Reserved tokens plus n content symbols: single letters when they fit,
  // "t<i>" otherwise.
  static Vocabulary symbols(int n_content) {
    Vocabulary v;
    for (int i = 0; i < n_content; ++i) v.add(content_symbol_name(i, n_content));
    return v;
  }

  static std::string content_symbol_name(int i, int n_content) {
    if (n_content <= 26) return std::string(1, static_cast<char>('a' + i));
    return "t" + std::to_string(i);
  }

  int add(const std::string& token) {
    if (token.empty()) throw VocabularyError("empty token");
    if (index_.count(token)) throw VocabularyError("duplicate token: " + token);
    return add_unchecked(token);
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  int n_content() const { return size() - kReserved; }
  static constexpr int first_content() { return kReserved; }

  const std::string& token(int i) const { return tokens_.at(static_cast<std::size_t>(i)); }

  int lookup(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) throw VocabularyError("unknown token: " + token);
    return it->second;
  }
  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open vocabulary for writing: " + path);
    for (const auto& t : tokens_) out << t << '\n';
  }

  static Vocabulary load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open vocabulary: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    if (lines.size() < kReserved || lines[0] != kSosToken || lines[1] != kEosToken ||
        lines[2] != kPadToken)
      throw ParseError("vocabulary must start with the three reserved tokens: " + path);
    Vocabulary v;
    for (std::size_t i = kReserved; i < lines.size(); ++i) {
      if (lines[i].empty()) throw ParseError("empty vocabulary line " + std::to_string(i));
      v.add(lines[i]);
    }
    return v;
  }

 private:
  static constexpr int kReserved = 3;
  int add_unchecked(const std::string& token) {
    tokens_.push_back(token);
    index_[token] = static_cast<int>(tokens_.size()) - 1;
    return index_[token];
  }
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct ModelConfig {
  int vocab_size = 0;
  int embed_dim = 16;
  int hidden_dim = 32;
  bool attention = false;
  int t_max = 10;
  int sos_id = Vocabulary::kSos;
  int eos_id = Vocabulary::kEos;
};

// Target sequence as the decoder consumes it: the end-of-sequence token is
// appended when it fits inside t_max, and the result is clipped to t_max.
inline std::vector<int> extended_target(std::span<const int> gt, int eos_id, int t_max) {
  std::vector<int> out;
  const int n = std::min<int>(static_cast<int>(gt.size()), t_max);
  out.assign(gt.begin(), gt.begin() + n);
  if (n < t_max) out.push_back(eos_id);
  return out;
}

template <typename H>
struct GruParamRefs {
  H wz, bz, wr, br, wh, bh;
};

template <typename H>
struct NetRefs {
  H embed, proj_w, proj_b;
  GruParamRefs<H> enc, dec;
  H att_w{}, att_u{}, att_v{};
  bool attention = false;
};

// Gated recurrent cell on concatenated [h_prev, x].
template <class B, typename H = typename B::Handle>
H gru_cell(B& b, const GruParamRefs<H>& w, H h_prev, H x) {
  H hx = b.concat({h_prev, x});
  H z = b.sigmoid(b.add(b.matmul(w.wz, hx), w.bz));
  H r = b.sigmoid(b.add(b.matmul(w.wr, hx), w.br));
  H cand = b.tanh(b.add(b.matmul(w.wh, b.concat({b.mul(r, h_prev), x})), w.bh));
  return b.add(b.mul(b.scale_add(z, -1.0, 1.0), h_prev), b.mul(z, cand));
}

// Per-backend handles to the encoder positions an attentive decoder reads.
template <typename H>
struct EncBind {
  std::vector<H> states;
  std::vector<H> proj;  // att_u @ state, fixed per sequence
};

// Single-head additive attention: softmax over v . tanh(W h + U h_i).
template <class B, typename H = typename B::Handle>
H attention_context(B& b, const NetRefs<H>& net, H h_query, const EncBind<H>& enc) {
  H wq = b.matmul(net.att_w, h_query);
  std::vector<H> energies;
  energies.reserve(enc.states.size());
  for (std::size_t i = 0; i < enc.states.size(); ++i)
    energies.push_back(b.sum(b.mul(net.att_v, b.tanh(b.add(wq, enc.proj[i])))));
  H alpha = b.softmax(b.concat(energies));
  H ctx = b.mul(b.pick(alpha, 0), enc.states[0]);
  for (std::size_t i = 1; i < enc.states.size(); ++i)
    ctx = b.add(ctx, b.mul(b.pick(alpha, static_cast<int>(i)), enc.states[i]));
  return ctx;
}

// One decoder cell: embed the previous token, optionally append the
// attention context, advance the GRU, project to scores.
template <class B, typename H = typename B::Handle>
std::pair<H, H> decoder_cell(B& b, const NetRefs<H>& net, H h_prev, int prev_token,
                             const EncBind<H>& enc) {
  H x = b.embed(net.embed, prev_token);
  if (net.attention) x = b.concat({x, attention_context(b, net, h_prev, enc)});
  H h = gru_cell(b, net.dec, h_prev, x);
  H s = b.add(b.matmul(net.proj_w, h), net.proj_b);
  return {h, s};
}

/// GRU encoder-decoder with a projection + softmax output layer. Parameters
/// live in an external ParameterStore; the model itself is stateless and
/// safe to share across concurrent read-only decodes.
class Seq2SeqModel {
 public:
  struct EncoderContext {
    Tensor final_state;
    std::vector<Tensor> states;    // per source position; kept when attention is on
    std::vector<Tensor> att_proj;  // att_u @ state, precomputed
    int src_len = 0;
  };

  struct DecoderState {
    Tensor h;
    int t = 0;
    const EncoderContext* ctx = nullptr;
  };

  // Reusable buffers for the allocation-free decoder step.
  struct DecodeWorkspace {
    Tensor x, wq, energy, ctx, hx, z, r, rhx, cand, hnew;
  };

  Seq2SeqModel(ModelConfig cfg, ParameterStore& store, std::uint64_t init_seed)
      : cfg_(cfg), store_(&store) {
    if (cfg_.vocab_size < 2) throw ContractError("model needs a vocabulary of at least 2");
    if (cfg_.hidden_dim < 1 || cfg_.embed_dim < 1 || cfg_.t_max < 1)
      throw ContractError("model dimensions must be positive");
    std::mt19937_64 rng(init_seed);
    const int h = cfg_.hidden_dim, e = cfg_.embed_dim, a = cfg_.vocab_size;
    const int dec_in = e + (cfg_.attention ? h : 0);
    init_param("embed", {a, e}, rng, true);
    init_gru("enc", e, rng);
    init_gru("dec", dec_in, rng);
    init_param("proj.w", {a, h}, rng, true);
    init_param("proj.b", {a}, rng, false);
    if (cfg_.attention) {
      init_param("att.w", {h, h}, rng, true);
      init_param("att.u", {h, h}, rng, true);
      init_param("att.v", {h}, rng, true);
    }
    bind_raw();
    zero_hidden_ = Tensor({h});
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore& store() const { return *store_; }
  int param_count() const { return store_->total_params(); }

  // ---- raw inference ----

  EncoderContext encode(std::span<const int> src) const {
    ValueBackend vb;
    return encode_with(vb, src);
  }

  EncoderContext encode_with(ValueBackend& vb, std::span<const int> src) const {
    if (src.empty()) throw ContractError("encode: empty input sequence");
    check_tokens(src);
    vb.reset();
    EncoderContext ctx;
    ctx.src_len = static_cast<int>(src.size());
    Tensor h = zero_hidden_;
    for (int tok : src) {
      vb.reset();
      auto hh = gru_cell(vb, raw_.enc, vb.constant(h), vb.embed(raw_.embed, tok));
      h = vb.value(hh);
      if (cfg_.attention) ctx.states.push_back(h);
    }
    ctx.final_state = std::move(h);
    if (cfg_.attention) {
      ctx.att_proj.reserve(ctx.states.size());
      for (const Tensor& s : ctx.states) {
        Tensor p;
        kernels::matmul(store_->value("att.u"), s, p);
        ctx.att_proj.push_back(std::move(p));
      }
    }
    return ctx;
  }

  DecoderState init_decoder(const EncoderContext& ctx) const {
    return DecoderState{ctx.final_state, 0, &ctx};
  }

  // Advances one cell: h_t from (h_{t-1}, prev_token), scores from h_t.
  void step(DecoderState& st, int prev_token, Tensor* scores) const {
    DecodeWorkspace ws;
    step_with(ws, st, prev_token, scores);
  }

  // Fused inference step; hand-written kernels for the roll-out hot path.
  // The tape path (decoder_cell) evaluates the same formulas node by node,
  // and a test keeps the two in agreement.
  void step_with(DecodeWorkspace& ws, DecoderState& st, int prev_token, Tensor* scores) const {
    if (st.t >= cfg_.t_max) throw SequenceLengthError("decoder stepped past t_max");
    check_token(prev_token);
    const int h_dim = cfg_.hidden_dim, e_dim = cfg_.embed_dim;
    const int in_dim = e_dim + (cfg_.attention ? h_dim : 0);
    const Tensor& h = st.h;
    const Tensor& embed = *raw_.embed;

    // hx = [h; embedding; attention context]
    ws.hx.resize({h_dim + in_dim});
    for (int j = 0; j < h_dim; ++j) ws.hx[j] = h[j];
    for (int j = 0; j < e_dim; ++j) ws.hx[h_dim + j] = embed.at(prev_token, j);
    if (cfg_.attention) {
      const EncoderContext& ctx = *st.ctx;
      kernels::matmul(*raw_.att_w, h, ws.wq);
      const int n_pos = static_cast<int>(ctx.states.size());
      ws.energy.resize({n_pos});
      const Tensor& v = *raw_.att_v;
      for (int i = 0; i < n_pos; ++i) {
        const Tensor& proj = ctx.att_proj[static_cast<std::size_t>(i)];
        double e = 0.0;
        for (int j = 0; j < h_dim; ++j) e += v[j] * std::tanh(ws.wq[j] + proj[j]);
        ws.energy[i] = e;
      }
      kernels::softmax(ws.energy, ws.energy);
      double* ctx_slot = ws.hx.data().data() + h_dim + e_dim;
      for (int j = 0; j < h_dim; ++j) ctx_slot[j] = 0.0;
      for (int i = 0; i < n_pos; ++i) {
        const Tensor& state = ctx.states[static_cast<std::size_t>(i)];
        const double a = ws.energy[i];
        for (int j = 0; j < h_dim; ++j) ctx_slot[j] += a * state[j];
      }
    }

    kernels::matmul(*raw_.dec.wz, ws.hx, ws.z);
    kernels::matmul(*raw_.dec.wr, ws.hx, ws.r);
    const Tensor& bz = *raw_.dec.bz;
    const Tensor& br = *raw_.dec.br;
    for (int j = 0; j < h_dim; ++j) {
      ws.z[j] = 1.0 / (1.0 + std::exp(-(ws.z[j] + bz[j])));
      ws.r[j] = 1.0 / (1.0 + std::exp(-(ws.r[j] + br[j])));
    }
    ws.rhx.resize({h_dim + in_dim});
    for (int j = 0; j < h_dim; ++j) ws.rhx[j] = ws.r[j] * h[j];
    for (int j = 0; j < in_dim; ++j) ws.rhx[h_dim + j] = ws.hx[h_dim + j];
    kernels::matmul(*raw_.dec.wh, ws.rhx, ws.cand);
    const Tensor& bh = *raw_.dec.bh;
    ws.hnew.resize({h_dim});
    for (int j = 0; j < h_dim; ++j) {
      const double cand = std::tanh(ws.cand[j] + bh[j]);
      ws.hnew[j] = (1.0 - ws.z[j]) * h[j] + ws.z[j] * cand;
    }
    std::swap(st.h, ws.hnew);
    st.t += 1;
    if (scores) {
      kernels::matmul(*raw_.proj_w, st.h, *scores);
      const Tensor& pb = *raw_.proj_b;
      for (int a = 0; a < cfg_.vocab_size; ++a) (*scores)[a] += pb[a];
    }
  }

  // Teacher-forced joint log-probability of target given input.
  double sequence_logprob(std::span<const int> src, std::span<const int> target) const {
    if (target.empty()) throw ContractError("sequence_logprob: empty target");
    check_tokens(target);
    EncoderContext ctx = encode(src);
    DecoderState st = init_decoder(ctx);
    DecodeWorkspace ws;
    Tensor scores, logp;
    double total = 0.0;
    int prev = cfg_.sos_id;
    for (int tok : target) {
      step_with(ws, st, prev, &scores);
      kernels::log_softmax(scores, logp);
      total += logp[tok];
      prev = tok;
    }
    return total;
  }

  // Greedy argmax decoding with optional emission overrides. `prefix` pins
  // the first positions; `enforced` pins one (position, token) pair. Ties
  // break toward the lowest token index. Stops at end-of-sequence (which is
  // excluded from the result) or after max_len emissions.
  std::vector<int> greedy_decode(std::span<const int> src, int max_len,
                                 std::optional<std::pair<int, int>> enforced = std::nullopt,
                                 std::span<const int> prefix = {}) const {
    if (max_len < 1) throw ContractError("greedy_decode: max_len must be at least 1");
    if (static_cast<int>(prefix.size()) >= max_len)
      throw ContractError("greedy_decode: prefix must be shorter than max_len");
    if (enforced && (enforced->first < 0 || enforced->first >= max_len))
      throw ContractError("greedy_decode: enforced position beyond max_len");
    if (enforced) check_token(enforced->second);
    check_tokens(prefix);
    EncoderContext ctx = encode(src);
    DecoderState st = init_decoder(ctx);
    DecodeWorkspace ws;
    Tensor scores;
    std::vector<int> out;
    int prev = cfg_.sos_id;
    const int steps = std::min(max_len, cfg_.t_max);
    for (int pos = 0; pos < steps; ++pos) {
      step_with(ws, st, prev, &scores);
      int tok;
      if (enforced && enforced->first == pos)
        tok = enforced->second;
      else if (pos < static_cast<int>(prefix.size()))
        tok = prefix[pos];
      else
        tok = kernels::argmax(scores.data());
      if (tok == cfg_.eos_id) break;
      out.push_back(tok);
      prev = tok;
    }
    return out;
  }

  // ---- differentiable path ----

  struct TapeBind {
    NetRefs<Tape::NodeId> net;
    EncBind<Tape::NodeId> enc;
    Tape::NodeId enc_final = -1;
  };

  // Runs the encoder on the tape and returns bound handles.
  TapeBind bind_on_tape(Tape& tape, std::span<const int> src) const {
    if (src.empty()) throw ContractError("empty input sequence");
    check_tokens(src);
    TapeBind tb;
    tb.net = bind_net(tape);
    Tape::NodeId h = tape.constant(zero_hidden_);
    for (int tok : src) {
      h = gru_cell(tape, tb.net.enc, h, tape.embed(tb.net.embed, tok));
      if (cfg_.attention) tb.enc.states.push_back(h);
    }
    tb.enc_final = h;
    if (cfg_.attention)
      for (Tape::NodeId s : tb.enc.states) tb.enc.proj.push_back(tape.matmul(tb.net.att_u, s));
    return tb;
  }

  // Teacher-forced decoder scores for cells 1..n_cells. Cell 1 consumes the
  // start token; cell t consumes conditioning[t-2]. Gradients flow through
  // the full network, encoder included.
  std::vector<Tape::NodeId> scores_on_tape(Tape& tape, std::span<const int> src,
                                           std::span<const int> conditioning, int n_cells) const {
    if (n_cells < 1) throw ContractError("scores_on_tape: need at least one cell");
    if (n_cells > cfg_.t_max) throw SequenceLengthError("scores_on_tape: n_cells beyond t_max");
    if (static_cast<int>(conditioning.size()) < n_cells - 1)
      throw ContractError("scores_on_tape: conditioning shorter than n_cells-1");
    check_tokens(conditioning);
    TapeBind tb = bind_on_tape(tape, src);
    std::vector<Tape::NodeId> out;
    out.reserve(static_cast<std::size_t>(n_cells));
    Tape::NodeId h = tb.enc_final;
    for (int t = 0; t < n_cells; ++t) {
      const int prev = (t == 0) ? cfg_.sos_id : conditioning[t - 1];
      auto [hh, s] = decoder_cell(tape, tb.net, h, prev, tb.enc);
      h = hh;
      out.push_back(s);
    }
    return out;
  }

 private:
  void init_param(const std::string& name, std::vector<int> shape, std::mt19937_64& rng,
                  bool random) {
    if (store_->has(name)) {
      if (store_->value(name).shape() != shape)
        throw DimensionError("parameter shape mismatch for " + name);
      // keep loaded values, but advance the stream as if freshly drawn
    }
    Tensor* t = store_->has(name) ? nullptr : &store_->create(name, shape);
    if (random) {
      std::uniform_real_distribution<double> dist(-0.1, 0.1);
      const long long n = detail::shape_numel(shape);
      for (long long i = 0; i < n; ++i) {
        const double v = dist(rng);
        if (t) (*t)[static_cast<int>(i)] = v;
      }
    }
  }

  void init_gru(const std::string& prefix, int in_dim, std::mt19937_64& rng) {
    const int h = cfg_.hidden_dim;
    init_param(prefix + ".wz", {h, h + in_dim}, rng, true);
    init_param(prefix + ".bz", {h}, rng, false);
    init_param(prefix + ".wr", {h, h + in_dim}, rng, true);
    init_param(prefix + ".br", {h}, rng, false);
    init_param(prefix + ".wh", {h, h + in_dim}, rng, true);
    init_param(prefix + ".bh", {h}, rng, false);
  }

  void bind_raw() {
    auto get = [this](const char* n) { return &store_->value(n); };
    raw_.embed = get("embed");
    raw_.proj_w = get("proj.w");
    raw_.proj_b = get("proj.b");
    raw_.enc = {get("enc.wz"), get("enc.bz"), get("enc.wr"),
                get("enc.br"), get("enc.wh"), get("enc.bh")};
    raw_.dec = {get("dec.wz"), get("dec.bz"), get("dec.wr"),
                get("dec.br"), get("dec.wh"), get("dec.bh")};
    raw_.attention = cfg_.attention;
    if (cfg_.attention) {
      raw_.att_w = get("att.w");
      raw_.att_u = get("att.u");
      raw_.att_v = get("att.v");
    }
  }

  NetRefs<Tape::NodeId> bind_net(Tape& tape) const {
    auto p = [&](const char* n) { return tape.param(*store_, n); };
    NetRefs<Tape::NodeId> net;
    net.embed = p("embed");
    net.proj_w = p("proj.w");
    net.proj_b = p("proj.b");
    net.enc = {p("enc.wz"), p("enc.bz"), p("enc.wr"), p("enc.br"), p("enc.wh"), p("enc.bh")};
    net.dec = {p("dec.wz"), p("dec.bz"), p("dec.wr"), p("dec.br"), p("dec.wh"), p("dec.bh")};
    net.attention = cfg_.attention;
    if (cfg_.attention) {
      net.att_w = p("att.w");
      net.att_u = p("att.u");
      net.att_v = p("att.v");
    }
    return net;
  }

  void check_token(int tok) const {
    if (tok < 0 || tok >= cfg_.vocab_size)
      throw VocabularyError("token index out of range: " + std::to_string(tok));
  }
  void check_tokens(std::span<const int> toks) const {
    for (int t : toks) check_token(t);
  }

  ModelConfig cfg_;
  ParameterStore* store_;
  NetRefs<ValueBackend::Handle> raw_;
  Tensor zero_hidden_;
};

}  // namespace searnn
