#include "dtts/t2e.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

using json = nlohmann::json;

namespace dtts::t2e {

double EmotionDistribution::sum() const {
  double s = 0.0;
  for (double v : p) s += v;
  return s;
}

void EmotionDistribution::validate(double tol) const {
  for (double v : p)
    if (v < 0.0) throw std::runtime_error("emotion distribution has a negative entry");
  if (std::abs(sum() - 1.0) > tol)
    throw std::runtime_error("emotion distribution sums to " + std::to_string(sum()) +
                             ", outside tolerance " + std::to_string(tol));
}

void EmotionDistribution::renormalize() {
  const double s = sum();
  if (s <= 0.0) throw std::runtime_error("cannot renormalize a zero distribution");
  for (double& v : p) v /= s;
}

int EmotionDistribution::argmax() const {
  return int(std::max_element(p.begin(), p.end()) - p.begin());
}

EmotionDistribution EmotionDistribution::one_hot(int emotion) {
  EmotionDistribution d;
  d.p[size_t(emotion)] = 1.0;
  return d;
}

EmotionDistribution EmotionDistribution::uniform() {
  EmotionDistribution d;
  for (double& v : d.p) v = 1.0 / kNumEmotions;
  return d;
}

double cross_entropy(const EmotionDistribution& target, const EmotionDistribution& pred) {
  double ce = 0.0;
  for (int i = 0; i < kNumEmotions; ++i)
    ce -= target.p[size_t(i)] * std::log(std::max(pred.p[size_t(i)], 1e-12));
  return ce;
}

double entropy(const EmotionDistribution& p) { return cross_entropy(p, p); }

const char* const kClassificationPrompt =
    "Given the input sentence, return a JSON object with probabilities for each of the 7 "
    "emotions. Probabilities must sum to 1 and be rounded to two decimal places.";
const char* const kDescriptivePromptTemplate =
    "Please generate descriptive sentences that express {emotion}.";
const char* const kScriptPromptTemplate =
    "Please generate script-like utterances that express {emotion}.";

const char* prompt_kind_name(PromptKind kind) {
  return kind == PromptKind::kDescriptive ? "descriptive" : "script-like";
}

std::string generation_prompt(int emotion, PromptKind kind) {
  std::string tmpl =
      kind == PromptKind::kDescriptive ? kDescriptivePromptTemplate : kScriptPromptTemplate;
  const std::string marker = "{emotion}";
  const size_t pos = tmpl.find(marker);
  tmpl.replace(pos, marker.size(), emotion_name(emotion));
  return tmpl;
}

namespace {

const std::array<std::vector<const char*>, kNumEmotions> kLexicon = {{
    {"furious", "angry", "rage", "outraged", "irate", "livid"},
    {"happy", "joyful", "delighted", "cheerful", "thrilled", "glad"},
    {"afraid", "scared", "terrified", "panicked", "dread", "fearful"},
    {"disgusting", "revolting", "nauseating", "repulsed", "vile", "gross"},
    {"sad", "sorrowful", "mournful", "tearful", "heartbroken", "grieving"},
    {"surprised", "astonished", "stunned", "startled", "amazed", "unexpected"},
    {"ordinary", "routine", "plain", "calm", "unremarkable", "steady"},
}};

const std::vector<const char*> kDescriptiveTemplates = {
    "She felt utterly {kw} as the letter slipped from her hands.",
    "The room went quiet, and everyone could see how {kw} he was.",
    "Walking home through the rain, I grew more and more {kw}.",
    "It was a {kw} moment none of them would forget.",
    "His voice carried a {kw} edge that filled the hallway.",
};

const std::vector<const char*> kScriptTemplates = {
    "\"I can't believe this... I'm completely {kw}!\" (slams the door)",
    "\"Look at me. Look at me! This is what {kw} feels like.\"",
    "\"{kw}? Yes. That is exactly the word for what I am right now.\"",
    "\"Stay back... I'm too {kw} to talk about it.\" (turns away)",
    "\"After all these years, here we are. I am {kw}.\"",
};

std::string lowercase(const std::string& s) {
  std::string out = s;
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return char(std::tolower(c)); });
  return out;
}

// Largest-remainder rounding to two decimals; the result sums to exactly 1.00.
EmotionDistribution round_to_cents(const EmotionDistribution& in) {
  std::array<int, kNumEmotions> cents{};
  std::array<double, kNumEmotions> remainder{};
  int total = 0;
  for (int i = 0; i < kNumEmotions; ++i) {
    const double scaled = in.p[size_t(i)] * 100.0;
    cents[size_t(i)] = int(std::floor(scaled + 1e-9));
    remainder[size_t(i)] = scaled - cents[size_t(i)];
    total += cents[size_t(i)];
  }
  std::array<int, kNumEmotions> order{};
  for (int i = 0; i < kNumEmotions; ++i) order[size_t(i)] = i;
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (remainder[size_t(a)] != remainder[size_t(b)])
      return remainder[size_t(a)] > remainder[size_t(b)];
    return a < b;
  });
  for (int k = 0; total < 100; ++k, ++total) ++cents[size_t(order[size_t(k % kNumEmotions)])];
  EmotionDistribution out;
  for (int i = 0; i < kNumEmotions; ++i) out.p[size_t(i)] = cents[size_t(i)] / 100.0;
  return out;
}

}  // namespace

LexiconTeacher::LexiconTeacher(uint64_t seed) : seed_(seed) {}

std::string LexiconTeacher::generate(int emotion, PromptKind kind, int index) {
  const auto& templates =
      kind == PromptKind::kDescriptive ? kDescriptiveTemplates : kScriptTemplates;
  Rng rng(seed_ ^ (uint64_t(emotion) << 32) ^ (uint64_t(kind == PromptKind::kScript) << 24) ^
          uint64_t(index));
  const auto& kws = kLexicon[size_t(emotion)];
  const std::string kw = kws[size_t(rng.uniform_int(0, int(kws.size()) - 1))];
  std::string text = templates[size_t(rng.uniform_int(0, int(templates.size()) - 1))];
  const std::string marker = "{kw}";
  const size_t pos = text.find(marker);
  text.replace(pos, marker.size(), kw);
  return text;
}

EmotionDistribution LexiconTeacher::classify(const std::string& text) {
  const std::string lowered = lowercase(text);
  std::array<double, kNumEmotions> hits{};
  double total = 0.0;
  for (int e = 0; e < kNumEmotions; ++e) {
    for (const char* kw : kLexicon[size_t(e)]) {
      size_t at = 0;
      while ((at = lowered.find(kw, at)) != std::string::npos) {
        hits[size_t(e)] += 1.0;
        at += std::strlen(kw);
      }
    }
    total += hits[size_t(e)];
  }
  EmotionDistribution d;
  if (total <= 0.0) {
    // Documented fallback: no lexicon hit leans Neutral.
    for (int i = 0; i < kNumEmotions; ++i) d.p[size_t(i)] = 0.05;
    d.p[size_t(emotion_index("Neutral"))] = 0.70;
  } else {
    for (int i = 0; i < kNumEmotions; ++i)
      d.p[size_t(i)] = 0.85 * hits[size_t(i)] / total + 0.15 / kNumEmotions;
  }
  return round_to_cents(d);
}

HttpTeacher::HttpTeacher(std::string host, int port, int timeout_sec, int retries,
                         double simplex_tol)
    : host_(std::move(host)),
      port_(port),
      timeout_sec_(timeout_sec),
      retries_(retries),
      simplex_tol_(simplex_tol) {}

std::string HttpTeacher::generate(int emotion, PromptKind kind, int index) {
  json req = {{"prompt", generation_prompt(emotion, kind)}, {"index", index}};
  std::string last_error;
  for (int attempt = 0; attempt <= retries_; ++attempt) {
    httplib::Client client(host_, port_);
    client.set_connection_timeout(timeout_sec_);
    client.set_read_timeout(timeout_sec_);
    auto res = client.Post("/v1/generate", req.dump(), "application/json");
    if (!res) {
      last_error = "connection failure";
      continue;
    }
    if (res->status != 200) {
      last_error = "status " + std::to_string(res->status);
      continue;
    }
    try {
      json body = json::parse(res->body);
      return body.at("text").get<std::string>();
    } catch (const std::exception& e) {
      last_error = std::string("parse failure: ") + e.what();
    }
  }
  throw std::runtime_error("teacher generate failed (" + last_error + ") for emotion " +
                           emotion_name(emotion));
}

EmotionDistribution HttpTeacher::classify(const std::string& text) {
  json req = {{"prompt", kClassificationPrompt}, {"text", text}};
  std::string last_error;
  for (int attempt = 0; attempt <= retries_; ++attempt) {
    httplib::Client client(host_, port_);
    client.set_connection_timeout(timeout_sec_);
    client.set_read_timeout(timeout_sec_);
    auto res = client.Post("/v1/emotion", req.dump(), "application/json");
    if (!res) {
      last_error = "connection failure";
      continue;
    }
    if (res->status != 200) {
      last_error = "status " + std::to_string(res->status);
      continue;
    }
    try {
      json body = json::parse(res->body);
      if (!body.is_object() || body.size() != size_t(kNumEmotions))
        throw std::runtime_error("response must have exactly the 7 emotion keys");
      EmotionDistribution d;
      for (int i = 0; i < kNumEmotions; ++i)
        d.p[size_t(i)] = body.at(kEmotionNames[size_t(i)]).get<double>();
      for (double v : d.p)
        if (v < 0.0) throw std::runtime_error("negative probability in response");
      const double drift = std::abs(d.sum() - 1.0);
      if (drift > simplex_tol_)
        throw std::runtime_error("response off the simplex by " + std::to_string(drift));
      d.renormalize();
      return d;
    } catch (const std::exception& e) {
      last_error = std::string("invalid response: ") + e.what();
    }
  }
  throw std::runtime_error("teacher classify failed (" + last_error + ") for text: " + text);
}

EmotionDistribution teacher_predict(const std::string& text, Teacher& teacher,
                                    double simplex_tol) {
  EmotionDistribution d = teacher.classify(text);
  for (double v : d.p)
    if (v < 0.0) throw std::runtime_error("teacher produced a negative probability");
  const double drift = std::abs(d.sum() - 1.0);
  if (drift > simplex_tol)
    throw std::runtime_error("teacher distribution off the simplex by " + std::to_string(drift));
  d.renormalize();
  return d;
}

std::vector<DistillPair> build_distill_dataset(int n, Teacher& teacher, Rng& rng,
                                               int parallelism) {
  if (n < kNumEmotions)
    throw std::runtime_error("build_distill_dataset: need at least 7 pairs, got " +
                             std::to_string(n));
  const uint64_t salt = rng.next_u64() & 0xffff;
  std::vector<DistillPair> out(static_cast<size_t>(n));

  auto fill = [&](int begin, int end) {
    for (int k = begin; k < end; ++k) {
      const int emotion = k % kNumEmotions;
      const PromptKind kind =
          ((k / kNumEmotions) % 2 == 0) ? PromptKind::kDescriptive : PromptKind::kScript;
      DistillPair pair;
      pair.kind = kind;
      pair.text = teacher.generate(emotion, kind, int(salt) + k);
      try {
        pair.p = teacher_predict(pair.text, teacher);
      } catch (const std::exception& e) {
        throw std::runtime_error(std::string(e.what()) + " [text: " + pair.text + "]");
      }
      out[size_t(k)] = std::move(pair);
    }
  };

  if (parallelism <= 1) {
    fill(0, n);
  } else {
    // Bounded parallel teacher calls; slots are pre-assigned by index, so
    // assembly order never depends on completion order.
    const int workers = std::min(parallelism, n);
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mu;
    const int chunk = (n + workers - 1) / workers;
    for (int wi = 0; wi < workers; ++wi) {
      const int begin = wi * chunk;
      const int end = std::min(n, begin + chunk);
      if (begin >= end) break;
      pool.emplace_back([&, begin, end] {
        try {
          fill(begin, end);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mu);
          if (!error) error = std::current_exception();
        }
      });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
  }
  return out;
}

void save_distill_dataset(const std::string& path, const std::vector<DistillPair>& data) {
  std::ostringstream out;
  for (const auto& pair : data) {
    json row = {{"text", pair.text},
                {"kind", prompt_kind_name(pair.kind)},
                {"p", pair.p.p}};
    out << row.dump() << "\n";
  }
  write_file(path, out.str());
}

std::vector<DistillPair> load_distill_dataset(const std::string& path) {
  std::istringstream in(read_file(path));
  std::vector<DistillPair> out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json row;
    try {
      row = json::parse(line);
    } catch (const std::exception& e) {
      throw std::runtime_error("distill dataset line " + std::to_string(line_no) + ": " + e.what());
    }
    DistillPair pair;
    pair.text = row.at("text").get<std::string>();
    const std::string kind = row.at("kind").get<std::string>();
    pair.kind = kind == "script-like" ? PromptKind::kScript : PromptKind::kDescriptive;
    auto probs = row.at("p");
    if (probs.size() != size_t(kNumEmotions))
      throw std::runtime_error("distill dataset line " + std::to_string(line_no) +
                               ": p must have 7 entries");
    for (int i = 0; i < kNumEmotions; ++i) pair.p.p[size_t(i)] = probs[size_t(i)].get<double>();
    pair.p.validate(0.02);
    out.push_back(std::move(pair));
  }
  return out;
}

void EmotionBank::validate() const {
  for (int e = 0; e < kNumEmotions; ++e)
    if (members[size_t(e)].empty())
      throw std::runtime_error(std::string("emotion bank: no samples for ") + emotion_name(e));
}

EmotionBank build_bank(const corpus::Corpus& emotional_corpus,
                       const cond::EmotionConditioner& conditioner) {
  EmotionBank bank;
  for (const auto& u : emotional_corpus.utterances) {
    Vec e = conditioner.embed(u.mel)->val.row(0);
    bank.members[size_t(u.emotion)].push_back(e);
  }
  bank.validate();
  for (int e = 0; e < kNumEmotions; ++e) {
    Vec mean = Vec::Zero(bank.members[size_t(e)][0].cols());
    for (const auto& v : bank.members[size_t(e)]) mean += v;
    bank.means[size_t(e)] = mean / float(bank.members[size_t(e)].size());
  }
  return bank;
}

Vec mix_emotion_vector(const EmotionDistribution& p, const EmotionBank& bank) {
  bank.validate();
  Vec out = Vec::Zero(bank.means[0].cols());
  for (int e = 0; e < kNumEmotions; ++e) out += float(p.p[size_t(e)]) * bank.means[size_t(e)];
  return out;
}

Student::Student(const StudentConfig& cfg_in) : cfg(cfg_in) {
  Rng rng(cfg.seed);
  tok_embed = ad::param(randn(rng, cfg.vocab, cfg.dim, 0.1f));
  pos_embed = ad::param(randn(rng, cfg.max_tokens, cfg.dim, 0.1f));
  const float w_std = 1.0f / std::sqrt(float(cfg.dim));
  blocks.resize(size_t(cfg.layers));
  for (auto& b : blocks) {
    b.ln1_g = ad::param(Mat::Ones(1, cfg.dim));
    b.ln1_b = ad::param(Mat::Zero(1, cfg.dim));
    b.ln2_g = ad::param(Mat::Ones(1, cfg.dim));
    b.ln2_b = ad::param(Mat::Zero(1, cfg.dim));
    b.wq = nn::Linear(rng, cfg.dim, cfg.dim, w_std);
    b.wk = nn::Linear(rng, cfg.dim, cfg.dim, w_std);
    b.wv = nn::Linear(rng, cfg.dim, cfg.dim, w_std);
    b.wo = nn::Linear(rng, cfg.dim, cfg.dim, w_std);
    b.ff1 = nn::Linear(rng, cfg.dim, 2 * cfg.dim);
    b.ff2 = nn::Linear(rng, 2 * cfg.dim, cfg.dim);
    auto lora = [&](LoraPair& pair) {
      pair.a = ad::param(randn(rng, cfg.lora_rank, cfg.dim, 0.1f));
      pair.b = ad::param(Mat::Zero(cfg.dim, cfg.lora_rank));
    };
    lora(b.lq);
    lora(b.lk);
    lora(b.lv);
    lora(b.lo);
  }
  final_ln_g = ad::param(Mat::Ones(1, cfg.dim));
  final_ln_b = ad::param(Mat::Zero(1, cfg.dim));
  head = nn::Linear(rng, cfg.dim, kNumEmotions);
}

nn::ParamMap Student::base_params() const {
  nn::ParamMap pm;
  pm.add("tok_embed", tok_embed);
  pm.add("pos_embed", pos_embed);
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    const auto& b = blocks[i];
    pm.add(p + ".ln1_g", b.ln1_g);
    pm.add(p + ".ln1_b", b.ln1_b);
    pm.add(p + ".ln2_g", b.ln2_g);
    pm.add(p + ".ln2_b", b.ln2_b);
    b.wq.collect(pm, p + ".wq");
    b.wk.collect(pm, p + ".wk");
    b.wv.collect(pm, p + ".wv");
    b.wo.collect(pm, p + ".wo");
    b.ff1.collect(pm, p + ".ff1");
    b.ff2.collect(pm, p + ".ff2");
  }
  pm.add("final_ln_g", final_ln_g);
  pm.add("final_ln_b", final_ln_b);
  return pm;
}

nn::ParamMap Student::adapter_params() const {
  nn::ParamMap pm;
  for (size_t i = 0; i < blocks.size(); ++i) {
    const std::string p = "block" + std::to_string(i);
    const auto& b = blocks[i];
    pm.add(p + ".lq.a", b.lq.a);
    pm.add(p + ".lq.b", b.lq.b);
    pm.add(p + ".lk.a", b.lk.a);
    pm.add(p + ".lk.b", b.lk.b);
    pm.add(p + ".lv.a", b.lv.a);
    pm.add(p + ".lv.b", b.lv.b);
    pm.add(p + ".lo.a", b.lo.a);
    pm.add(p + ".lo.b", b.lo.b);
  }
  head.collect(pm, "head");
  return pm;
}

std::vector<int> Student::tokenize(const std::string& text) const {
  std::vector<int> out;
  for (size_t i = 0; i + 1 < text.size() && int(out.size()) < cfg.max_tokens; ++i) {
    const unsigned a = static_cast<unsigned char>(text[i]);
    const unsigned b = static_cast<unsigned char>(text[i + 1]);
    out.push_back(int((a * 31u + b) % unsigned(cfg.vocab)));
  }
  if (out.empty()) out.push_back(0);
  return out;
}

ad::Value Student::logits(const std::string& text) const {
  const auto tokens = tokenize(text);
  std::vector<int> pos(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) pos[i] = int(i);
  ad::Value h = ad::add(ad::rows(tok_embed, tokens), ad::rows(pos_embed, pos));
  for (const auto& b : blocks) {
    // Attention projections carry low-rank adapter deltas on top of the
    // frozen base weights.
    auto adapted = [&](const nn::Linear& lin, const LoraPair& lora, const ad::Value& x) {
      return ad::add(ad::add(ad::matmul(x, lin.w), ad::matmul(x, ad::matmul(lora.b, lora.a))),
                     lin.b);
    };
    ad::Value normed = ad::layer_norm(h, b.ln1_g, b.ln1_b);
    ad::Value q = adapted(b.wq, b.lq, normed);
    ad::Value k = adapted(b.wk, b.lk, normed);
    ad::Value v = adapted(b.wv, b.lv, normed);
    const int dh = cfg.dim / cfg.heads;
    std::vector<ad::Value> heads_out;
    for (int hd = 0; hd < cfg.heads; ++hd) {
      ad::Value qh = ad::slice_cols(q, hd * dh, dh);
      ad::Value kh = ad::slice_cols(k, hd * dh, dh);
      ad::Value vh = ad::slice_cols(v, hd * dh, dh);
      ad::Value scores = ad::scale(ad::matmul(qh, ad::transpose(kh)), 1.0f / std::sqrt(float(dh)));
      heads_out.push_back(ad::matmul(ad::softmax_rows(scores), vh));
    }
    ad::Value attn = adapted(b.wo, b.lo, ad::concat_cols(heads_out));
    h = ad::add(h, attn);
    ad::Value normed2 = ad::layer_norm(h, b.ln2_g, b.ln2_b);
    h = ad::add(h, b.ff2(ad::gelu(b.ff1(normed2))));
  }
  ad::Value pooled = ad::mean_rows(ad::layer_norm(h, final_ln_g, final_ln_b));
  return head(pooled);
}

EmotionDistribution Student::predict(const std::string& text) const {
  const ad::Value lg = logits(text);
  double mx = -1e30;
  for (int i = 0; i < kNumEmotions; ++i) mx = std::max(mx, double(lg->val(0, i)));
  EmotionDistribution d;
  double denom = 0.0;
  for (int i = 0; i < kNumEmotions; ++i) {
    d.p[size_t(i)] = std::exp(double(lg->val(0, i)) - mx);
    denom += d.p[size_t(i)];
  }
  for (double& v : d.p) v /= denom;
  return d;
}

double mean_cross_entropy(const Student& student, const std::vector<DistillPair>& pairs) {
  if (pairs.empty()) return 0.0;
  double total = 0.0;
  for (const auto& pair : pairs) total += cross_entropy(pair.p, student.predict(pair.text));
  return total / double(pairs.size());
}

DistillStats distill_student(Student& student, const std::vector<DistillPair>& dataset,
                             const DistillConfig& cfg) {
  if (dataset.empty()) throw std::runtime_error("distill_student: empty dataset");
  if (student.cfg.lora_rank >= student.cfg.dim)
    throw std::runtime_error("distill_student: lora rank must be below the attention width");

  nn::ParamMap base = student.base_params();
  nn::ParamMap adapters = student.adapter_params();
  nn::set_trainable(base, false);
  nn::set_trainable(adapters, true);

  Rng rng(cfg.seed);
  std::vector<int> order(dataset.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = int(i);
  for (int i = int(order.size()) - 1; i > 0; --i)
    std::swap(order[size_t(i)], order[size_t(rng.uniform_int(0, i))]);
  const int holdout_n = std::max(1, int(std::lround(cfg.holdout_frac * double(dataset.size()))));
  std::vector<DistillPair> holdout, train;
  for (size_t i = 0; i < order.size(); ++i) {
    const auto& pair = dataset[size_t(order[i])];
    if (int(i) < holdout_n && dataset.size() > 1)
      holdout.push_back(pair);
    else
      train.push_back(pair);
  }
  if (train.empty()) train = holdout;

  DistillStats stats;
  stats.base_checksum_before = nn::checksum(base);
  stats.train_ce_before = mean_cross_entropy(student, train);
  stats.holdout_ce_before = mean_cross_entropy(student, holdout);

  std::vector<ad::Value> trainables = adapters.values();
  nn::AdamW opt;
  opt.lr = cfg.lr;
  const float inv_batch = 1.0f / float(cfg.batch);
  for (int step = 0; step < cfg.steps; ++step) {
    for (int b = 0; b < cfg.batch; ++b) {
      const auto& pair = train[size_t(rng.uniform_int(0, int(train.size()) - 1))];
      ad::Value logq = ad::log_softmax_rows(student.logits(pair.text));
      Mat target(1, kNumEmotions);
      for (int i = 0; i < kNumEmotions; ++i) target(0, i) = float(pair.p.p[size_t(i)]);
      ad::Value loss = ad::scale(ad::sum_all(ad::mul(logq, ad::constant(target))), -1.0f);
      ad::backward(ad::scale(loss, inv_batch));
    }
    nn::clip_grad_norm(trainables, double(cfg.grad_clip));
    opt.step(trainables);
    nn::zero_grads(trainables);
    if (cfg.log_every > 0 && (step + 1) % cfg.log_every == 0)
      std::cerr << "[t2e] distill step " << (step + 1) << "/" << cfg.steps << "\n";
  }

  stats.base_checksum_after = nn::checksum(base);
  stats.train_ce_after = mean_cross_entropy(student, train);
  stats.holdout_ce_after = mean_cross_entropy(student, holdout);
  return stats;
}

void save_student(ByteWriter& w, const Student& student) {
  nn::ParamMap base = student.base_params();
  nn::ParamMap adapters = student.adapter_params();
  nn::save_params(w, base);
  nn::save_params(w, adapters);
}

void load_student(ByteReader& r, Student& student) {
  nn::ParamMap base = student.base_params();
  nn::ParamMap adapters = student.adapter_params();
  nn::load_params(r, base);
  nn::load_params(r, adapters);
}

}  // namespace dtts::t2e
