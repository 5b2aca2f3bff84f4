#include "dtts/t2e.hpp"

#include <doctest.h>
#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <cmath>
#include <filesystem>
#include <thread>

using namespace dtts;
using json = nlohmann::json;

namespace {

bool two_decimal(double v) { return std::abs(v * 100.0 - std::round(v * 100.0)) < 1e-9; }

t2e::EmotionBank synthetic_bank(int per_class, int dim, uint64_t seed) {
  Rng rng(seed);
  t2e::EmotionBank bank;
  for (int e = 0; e < kNumEmotions; ++e) {
    Vec mean = Vec::Zero(dim);
    for (int i = 0; i < per_class; ++i) {
      Vec v(dim);
      for (int d = 0; d < dim; ++d) v(d) = float(rng.normal());
      bank.members[size_t(e)].push_back(v);
      mean += v;
    }
    bank.means[size_t(e)] = mean / float(per_class);
  }
  return bank;
}

}  // namespace

TEST_CASE("mock teacher obeys the lexicon and the simplex") {
  t2e::LexiconTeacher teacher;

  SUBCASE("a lone anger keyword wins the argmax") {
    auto p = teacher.classify("I am furious.");
    CHECK(p.argmax() == emotion_index("Anger"));
  }
  SUBCASE("every output sums to exactly one with two-decimal entries") {
    for (const char* text : {"furious and sad", "", "nothing to see", "joyful joyful gross"}) {
      auto p = teacher.classify(text);
      CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
      for (double v : p.p) CHECK(two_decimal(v));
    }
  }
  SUBCASE("empty text falls back to the documented Neutral default") {
    auto p = teacher.classify("");
    CHECK(p.p[size_t(emotion_index("Neutral"))] >= 0.5);
  }
  SUBCASE("generated texts carry their emotion's keyword") {
    for (int e = 0; e < kNumEmotions; ++e) {
      const std::string text = teacher.generate(e, t2e::PromptKind::kDescriptive, 0);
      auto p = teacher.classify(text);
      CHECK(p.argmax() == e);
    }
  }
}

TEST_CASE("generation prompts substitute the emotion name") {
  CHECK(t2e::generation_prompt(emotion_index("Fear"), t2e::PromptKind::kDescriptive) ==
        "Please generate descriptive sentences that express Fear.");
  CHECK(t2e::generation_prompt(emotion_index("Anger"), t2e::PromptKind::kScript) ==
        "Please generate script-like utterances that express Anger.");
}

TEST_CASE("build_distill_dataset balances cells and reproduces byte-identically") {
  t2e::LexiconTeacher teacher;

  SUBCASE("n below 7 is rejected") {
    Rng rng(1);
    CHECK_THROWS_AS(t2e::build_distill_dataset(6, teacher, rng), std::runtime_error);
  }
  SUBCASE("n = 14 gives exactly one pair per (emotion, kind) cell") {
    Rng rng(2);
    auto data = t2e::build_distill_dataset(14, teacher, rng);
    REQUIRE(data.size() == 14);
    int counts[kNumEmotions][2] = {};
    for (size_t k = 0; k < data.size(); ++k) {
      const int emotion = int(k) % kNumEmotions;
      ++counts[emotion][data[k].kind == t2e::PromptKind::kScript ? 1 : 0];
      CHECK(data[k].p.sum() == doctest::Approx(1.0).epsilon(1e-9));
      for (double v : data[k].p.p) CHECK(two_decimal(v));
    }
    for (int e = 0; e < kNumEmotions; ++e) {
      CHECK(counts[e][0] == 1);
      CHECK(counts[e][1] == 1);
    }
  }
  SUBCASE("fixed seed reproduces the dataset byte for byte") {
    auto dir = std::filesystem::temp_directory_path() / "dtts_test_t2e";
    std::filesystem::create_directories(dir);
    Rng rng1(3), rng2(3);
    auto a = t2e::build_distill_dataset(28, teacher, rng1);
    auto b = t2e::build_distill_dataset(28, teacher, rng2);
    const std::string pa = (dir / "a.jsonl").string();
    const std::string pb = (dir / "b.jsonl").string();
    t2e::save_distill_dataset(pa, a);
    t2e::save_distill_dataset(pb, b);
    CHECK(read_file(pa) == read_file(pb));

    auto across_parallelism = [&](int workers) {
      Rng rng(3);
      return t2e::build_distill_dataset(28, teacher, rng, workers);
    };
    auto par = across_parallelism(4);
    const std::string pc = (dir / "c.jsonl").string();
    t2e::save_distill_dataset(pc, par);
    CHECK(read_file(pc) == read_file(pa));  // order-stable assembly

    auto loaded = t2e::load_distill_dataset(pa);
    REQUIRE(loaded.size() == a.size());
    for (size_t i = 0; i < a.size(); ++i) {
      CHECK(loaded[i].text == a[i].text);
      CHECK(loaded[i].kind == a[i].kind);
      for (int e = 0; e < kNumEmotions; ++e)
        CHECK(loaded[i].p.p[size_t(e)] == doctest::Approx(a[i].p.p[size_t(e)]));
    }
  }
}

TEST_CASE("http teacher speaks the wire protocol") {
  httplib::Server server;
  std::atomic<int> classify_calls{0};
  std::string seen_prompt;

  server.Post("/v1/emotion", [&](const httplib::Request& req, httplib::Response& res) {
    json body = json::parse(req.body);
    seen_prompt = body.at("prompt").get<std::string>();
    const std::string text = body.at("text").get<std::string>();
    const int call = classify_calls++;
    if (text == "off-simplex-small") {
      // Drifts by 0.01: must be renormalized, not rejected.
      res.set_content(R"({"Anger":0.51,"Happiness":0.1,"Fear":0.1,"Disgust":0.1,)"
                      R"("Sadness":0.1,"Surprise":0.05,"Neutral":0.05})",
                      "application/json");
    } else if (text == "off-simplex-large") {
      res.set_content(R"({"Anger":0.9,"Happiness":0.9,"Fear":0.1,"Disgust":0.1,)"
                      R"("Sadness":0.1,"Surprise":0.1,"Neutral":0.1})",
                      "application/json");
    } else if (text == "garbage-once") {
      if (call == 0)
        res.set_content("not json at all", "application/json");
      else
        res.set_content(R"({"Anger":0.2,"Happiness":0.2,"Fear":0.1,"Disgust":0.1,)"
                        R"("Sadness":0.1,"Surprise":0.1,"Neutral":0.2})",
                        "application/json");
    } else {
      res.set_content(R"({"Anger":0.05,"Happiness":0.6,"Fear":0.05,"Disgust":0.05,)"
                      R"("Sadness":0.05,"Surprise":0.1,"Neutral":0.1})",
                      "application/json");
    }
  });
  server.Post("/v1/generate", [&](const httplib::Request& req, httplib::Response& res) {
    json body = json::parse(req.body);
    json out = {{"text", "generated for: " + body.at("prompt").get<std::string>()}};
    res.set_content(out.dump(), "application/json");
  });

  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread runner([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  t2e::HttpTeacher teacher("127.0.0.1", port, 5, 1, 0.02);

  SUBCASE("happy path carries the verbatim classification prompt") {
    auto p = t2e::teacher_predict("a cheerful line", teacher);
    CHECK(p.argmax() == emotion_index("Happiness"));
    CHECK(seen_prompt == t2e::kClassificationPrompt);
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("small drift renormalizes, large drift rejects") {
    auto p = t2e::teacher_predict("off-simplex-small", teacher);
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK_THROWS_AS(teacher.classify("off-simplex-large"), std::runtime_error);
  }
  SUBCASE("one bad response is retried") {
    auto p = teacher.classify("garbage-once");
    CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(classify_calls.load() >= 2);
  }
  SUBCASE("generation round trips the prompt template") {
    const std::string text = teacher.generate(emotion_index("Sadness"),
                                              t2e::PromptKind::kDescriptive, 0);
    CHECK(text == "generated for: Please generate descriptive sentences that express Sadness.");
  }
  SUBCASE("unreachable backend fails after retries") {
    t2e::HttpTeacher dead("127.0.0.1", 1, 1, 1, 0.02);
    CHECK_THROWS_AS(dead.classify("anything"), std::runtime_error);
  }

  server.stop();
  runner.join();
}

TEST_CASE("emotion bank means are arithmetic means") {
  SUBCASE("one sample per class: mean equals the sample") {
    auto bank = synthetic_bank(1, 6, 1);
    for (int e = 0; e < kNumEmotions; ++e)
      CHECK(bank.means[size_t(e)] == bank.members[size_t(e)][0]);
  }
  SUBCASE("two samples per class: cached mean equals (v1+v2)/2") {
    auto bank = synthetic_bank(2, 6, 2);
    for (int e = 0; e < kNumEmotions; ++e) {
      Vec expect = (bank.members[size_t(e)][0] + bank.members[size_t(e)][1]) / 2.0f;
      CHECK(bank.means[size_t(e)].isApprox(expect, 1e-6f));
    }
  }
  SUBCASE("duplicating a sample keeps the mean") {
    auto bank = synthetic_bank(1, 6, 3);
    Vec before = bank.means[0];
    bank.members[0].push_back(bank.members[0][0]);
    Vec after = (bank.members[0][0] + bank.members[0][1]) / 2.0f;
    CHECK(after.isApprox(before, 1e-6f));
  }
  SUBCASE("a missing class is an error") {
    auto bank = synthetic_bank(1, 6, 4);
    bank.members[3].clear();
    CHECK_THROWS_AS(bank.validate(), std::runtime_error);
  }
}

TEST_CASE("build_bank groups by label against the conditioner") {
  corpus::SynthSpec spec;
  spec.seed = 77;
  spec.n_speakers = 2;
  spec.utts_per_speaker = 7;
  spec.frames_min = 12;
  spec.frames_max = 20;
  spec.d_mel = 16;
  auto corpus = corpus::synth_corpus(spec);

  cond::CondConfig kcfg;
  kcfg.d_mel = 16;
  kcfg.dim = 12;
  kcfg.hidden = 8;
  cond::EmotionConditioner conditioner(kcfg);

  auto bank = t2e::build_bank(corpus, conditioner);
  int total = 0;
  for (int e = 0; e < kNumEmotions; ++e) {
    CHECK(!bank.members[size_t(e)].empty());
    total += int(bank.members[size_t(e)].size());
    Vec mean = Vec::Zero(12);
    for (const auto& v : bank.members[size_t(e)]) mean += v;
    mean /= float(bank.members[size_t(e)].size());
    CHECK(bank.means[size_t(e)].isApprox(mean, 1e-5f));
  }
  CHECK(total == corpus.size());
}

TEST_CASE("mix_emotion_vector collapses, averages, and stays linear") {
  auto bank = synthetic_bank(3, 10, 5);

  SUBCASE("one-hot collapse to the class mean") {
    for (int e = 0; e < kNumEmotions; ++e) {
      Vec got = t2e::mix_emotion_vector(t2e::EmotionDistribution::one_hot(e), bank);
      CHECK(got.isApprox(bank.means[size_t(e)], 1e-6f));
    }
  }
  SUBCASE("uniform mix equals the mean of class means") {
    Vec expect = Vec::Zero(10);
    for (int e = 0; e < kNumEmotions; ++e) expect += bank.means[size_t(e)];
    expect /= float(kNumEmotions);
    Vec got = t2e::mix_emotion_vector(t2e::EmotionDistribution::uniform(), bank);
    CHECK(got.isApprox(expect, 1e-6f));
  }
  SUBCASE("linearity on random convex combinations") {
    Rng rng(6);
    for (int trial = 0; trial < 20; ++trial) {
      t2e::EmotionDistribution p, q;
      double ps = 0.0, qs = 0.0;
      for (int e = 0; e < kNumEmotions; ++e) {
        p.p[size_t(e)] = rng.uniform();
        q.p[size_t(e)] = rng.uniform();
        ps += p.p[size_t(e)];
        qs += q.p[size_t(e)];
      }
      for (int e = 0; e < kNumEmotions; ++e) {
        p.p[size_t(e)] /= ps;
        q.p[size_t(e)] /= qs;
      }
      const double lam = rng.uniform();
      t2e::EmotionDistribution mix;
      for (int e = 0; e < kNumEmotions; ++e)
        mix.p[size_t(e)] = lam * p.p[size_t(e)] + (1.0 - lam) * q.p[size_t(e)];
      Vec lhs = t2e::mix_emotion_vector(mix, bank);
      Vec rhs = float(lam) * t2e::mix_emotion_vector(p, bank) +
                float(1.0 - lam) * t2e::mix_emotion_vector(q, bank);
      CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-5f);
    }
  }
}

TEST_CASE("distillation trains adapters only and lowers held-out cross-entropy") {
  t2e::LexiconTeacher teacher;
  Rng rng(7);
  auto dataset = t2e::build_distill_dataset(84, teacher, rng);

  t2e::StudentConfig scfg;
  scfg.dim = 32;
  scfg.layers = 2;
  scfg.heads = 2;
  scfg.lora_rank = 4;
  t2e::Student student(scfg);

  t2e::DistillConfig dcfg;
  dcfg.steps = 250;
  dcfg.batch = 8;
  auto stats = t2e::distill_student(student, dataset, dcfg);

  CHECK(stats.base_checksum_before == stats.base_checksum_after);
  CHECK(stats.holdout_ce_after < 0.8 * stats.holdout_ce_before);
  CHECK(stats.train_ce_after < stats.train_ce_before);

  SUBCASE("rank at or above the width is rejected") {
    t2e::StudentConfig bad = scfg;
    bad.lora_rank = bad.dim;
    t2e::Student s2(bad);
    CHECK_THROWS_AS(t2e::distill_student(s2, dataset, dcfg), std::runtime_error);
  }
}

TEST_CASE("cross-entropy floor is the teacher entropy when the student copies it") {
  t2e::LexiconTeacher teacher;
  Rng rng(8);
  auto pairs = t2e::build_distill_dataset(20, teacher, rng);
  double floor_sum = 0.0, ce_sum = 0.0;
  for (const auto& pair : pairs) {
    floor_sum += t2e::entropy(pair.p);
    ce_sum += t2e::cross_entropy(pair.p, pair.p);  // student output == teacher
  }
  CHECK(ce_sum == doctest::Approx(floor_sum).epsilon(1e-9));
}

TEST_CASE("student serialization round trips") {
  t2e::StudentConfig scfg;
  scfg.dim = 16;
  scfg.layers = 1;
  t2e::Student a(scfg);
  ByteWriter w;
  t2e::save_student(w, a);

  t2e::Student b(scfg);
  ByteReader r(w.buf);
  t2e::load_student(r, b);
  CHECK(nn::checksum(a.base_params()) == nn::checksum(b.base_params()));
  CHECK(nn::checksum(a.adapter_params()) == nn::checksum(b.adapter_params()));
  CHECK(a.predict("a furious test").p == b.predict("a furious test").p);
}
