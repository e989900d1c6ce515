#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <boost/property_tree/ini_parser.hpp>

#include "concordia/harness.hpp"

namespace concordia::harness {

namespace {

double round_to(double v, int digits) {
  const double s = std::pow(10.0, digits);
  return std::round(v * s) / s;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return aa > 0.0 && bb > 0.0 ? ab / std::sqrt(aa * bb) : 0.0;
}

constexpr std::size_t latent_dim = 4;

// Cluster centres plus a small per-member perturbation.
std::vector<std::vector<double>> clustered(std::size_t n, std::size_t clusters, std::mt19937_64& rng,
                                           std::vector<std::size_t>& membership) {
  std::normal_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 0.3);
  std::vector<std::vector<double>> centres(clusters, std::vector<double>(latent_dim));
  for (auto& c : centres) {
    for (auto& v : c) v = unit(rng);
  }
  std::vector<std::vector<double>> out(n, std::vector<double>(latent_dim));
  membership.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    membership[i] = i % clusters;
    for (std::size_t k = 0; k < latent_dim; ++k) out[i][k] = centres[membership[i]][k] + jitter(rng);
  }
  return out;
}

void similarity_facts(grounding::FactSet& facts, const std::string& predicate, const std::string& prefix,
                      const std::vector<std::vector<double>>& latent, double threshold) {
  for (std::size_t a = 0; a < latent.size(); ++a) {
    for (std::size_t b = 0; b < latent.size(); ++b) {
      if (a != b && cosine(latent[a], latent[b]) >= threshold) {
        facts.add({predicate, {prefix + std::to_string(a), prefix + std::to_string(b)}}, 1.0);
      }
    }
  }
}

const std::vector<std::string> activity_names = {"crossing", "waiting", "queuing", "walking",
                                                 "talking",  "dancing", "jogging"};

}  // namespace

SyntheticTask synth_recommend(const RecommendParams& p) {
  if (p.clusters == 0) throw std::invalid_argument("synth_recommend: clusters must be positive");
  if (p.density < 0.0 || p.density > 1.0) throw std::invalid_argument("synth_recommend: density must be in [0, 1]");
  if (p.test_fraction < 0.0 || p.test_fraction >= 1.0) {
    throw std::invalid_argument("synth_recommend: test_fraction must be in [0, 1)");
  }
  std::mt19937_64 rng(p.seed);
  std::vector<std::size_t> user_cluster, item_cluster;
  const auto users = clustered(p.users, p.clusters, rng, user_cluster);
  const auto items = clustered(p.items, p.clusters, rng, item_cluster);
  std::uniform_real_distribution<double> bias(-0.5, 0.5);
  std::vector<double> user_bias(p.clusters), item_bias(p.clusters);
  for (auto& b : user_bias) b = bias(rng);
  for (auto& b : item_bias) b = bias(rng);

  SyntheticTask task;
  for (std::size_t k = 0; k < latent_dim; ++k) task.data.feature_names.push_back("user" + std::to_string(k));
  for (std::size_t k = 0; k < latent_dim; ++k) task.data.feature_names.push_back("item" + std::to_string(k));
  for (std::size_t k = 0; k < p.noise_features; ++k) task.data.feature_names.push_back("noise" + std::to_string(k));
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.25);
  std::normal_distribution<double> feature_noise(0.0, p.feature_noise);
  std::normal_distribution<double> unit_noise(0.0, 1.0);
  for (std::size_t u = 0; u < p.users; ++u) {
    for (std::size_t i = 0; i < p.items; ++i) {
      if (coin(rng) >= p.density) continue;
      const bool test = coin(rng) < p.test_fraction;
      double r = 3.0 + 1.5 * cosine(users[u], items[i]) + user_bias[user_cluster[u]] + item_bias[item_cluster[i]] +
                 noise(rng);
      r = round_to(std::clamp(r, 1.0, 5.0), 3);
      Datum d;
      d.id = "u" + std::to_string(u) + "_i" + std::to_string(i);
      d.split = test ? "test" : "train";
      d.group = d.id;
      d.anchor = {"u" + std::to_string(u), "i" + std::to_string(i)};
      d.label = logic::format_number(r);
      for (double v : users[u]) d.features.push_back(round_to(v + feature_noise(rng), 4));
      for (double v : items[i]) d.features.push_back(round_to(v + feature_noise(rng), 4));
      for (std::size_t k = 0; k < p.noise_features; ++k) d.features.push_back(round_to(unit_noise(rng), 4));
      task.data.data.push_back(std::move(d));
    }
  }
  similarity_facts(task.data.facts, "SimilarUser", "u", users, p.similarity_threshold);
  similarity_facts(task.data.facts, "SimilarItem", "i", items, p.similarity_threshold);

  task.theory = logic::parse_theory(
      "predicate: SimilarUser/2 closed .\n"
      "predicate: SimilarItem/2 closed .\n"
      "predicate: Rating/2 closed .\n"
      "predicate: UserAvg/2 closed .\n"
      "predicate: ItemAvg/2 closed .\n"
      "predicate: Dnn/2 closed .\n"
      "LEARN :: SimilarItem(I1, I2) & Rating(U, I1) -> Rating(U, I2) .\n"
      "LEARN :: SimilarUser(U1, U2) & Rating(U1, I) -> Rating(U2, I) .\n"
      "LEARN :: UserAvg(U, I) <-> Rating(U, I) .\n"
      "LEARN :: ItemAvg(U, I) <-> Rating(U, I) .\n"
      "LEARN :: Dnn(U, I) <-> Rating(U, I) .\n");

  auto& m = task.mapping;
  m.task = neural::Task::regression;
  m.target = AtomTemplate::parse("Rating(@0, @1)");
  m.lo = 1.0;
  m.hi = 5.0;
  m.neural_atom = AtomTemplate::parse("Dnn(@0, @1)");
  m.observe_training_labels = true;
  m.mean_atoms = {{"UserAvg", 0}, {"ItemAvg", 1}};
  return task;
}

SyntheticTask synth_latent_chain(const ChainParams& p) {
  if (p.classes < 2 || p.classes > activity_names.size()) {
    throw std::invalid_argument("synth_latent_chain: classes must be between 2 and " +
                                std::to_string(activity_names.size()));
  }
  if (p.frames_per_scene == 0 || p.boxes_per_frame == 0) {
    throw std::invalid_argument("synth_latent_chain: frames_per_scene and boxes_per_frame must be positive");
  }
  if (p.noise < 0.0 || p.noise > 1.0) throw std::invalid_argument("synth_latent_chain: noise must be in [0, 1]");
  std::mt19937_64 rng(p.seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> feature_noise(0.0, p.feature_noise);
  std::normal_distribution<double> drift(0.0, 0.03);
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_class(0, p.classes - 1);
  std::uniform_int_distribution<std::size_t> pick_other(1, p.classes - 1);

  std::vector<std::vector<double>> prototype(p.classes, std::vector<double>(p.feature_dim));
  for (auto& proto : prototype) {
    for (auto& v : proto) v = unit(rng);
  }

  SyntheticTask task;
  auto& d = task.data;
  for (std::size_t k = 0; k < p.feature_dim; ++k) d.feature_names.push_back("x" + std::to_string(k));

  const std::size_t scenes = (p.frames + p.frames_per_scene - 1) / p.frames_per_scene;
  auto box_name = [](std::size_t f, std::size_t b) { return "b" + std::to_string(f) + "_" + std::to_string(b); };
  for (std::size_t s = 0; s < scenes; ++s) {
    const std::string scene = "s" + std::to_string(s);
    const bool test = s % 3 == 2;
    auto& facts = d.group_facts[scene];
    const std::size_t activity = pick_class(rng);
    std::vector<std::size_t> action(p.boxes_per_frame);
    for (auto& a : action) a = coin(rng) < p.noise ? (activity + pick_other(rng)) % p.classes : activity;
    std::vector<std::array<double, 2>> pos(p.boxes_per_frame);
    for (auto& xy : pos) xy = {coin(rng), coin(rng)};
    std::vector<std::vector<std::array<double, 2>>> placed;
    const std::size_t first = s * p.frames_per_scene;
    const std::size_t last = std::min(p.frames, first + p.frames_per_scene);
    for (std::size_t f = first; f < last; ++f) {
      const std::string frame = "f" + std::to_string(f);
      std::vector<std::size_t> votes(p.classes, 0);
      for (auto a : action) ++votes[a];
      const auto majority = static_cast<std::size_t>(std::max_element(votes.begin(), votes.end()) - votes.begin());
      facts.add({"FLabel", {frame, activity_names[majority]}}, 1.0);
      if (f > first) {
        for (auto& xy : pos) {
          xy[0] = std::clamp(xy[0] + drift(rng), 0.0, 1.0);
          xy[1] = std::clamp(xy[1] + drift(rng), 0.0, 1.0);
        }
      }
      placed.push_back(pos);
      for (std::size_t b = 0; b < p.boxes_per_frame; ++b) {
        Datum r;
        r.id = box_name(f, b);
        r.split = test ? "test" : "train";
        r.group = scene;
        r.anchor = {r.id};
        r.label = activity_names[action[b]];
        for (std::size_t k = 0; k < p.feature_dim; ++k) {
          r.features.push_back(round_to(prototype[action[b]][k] + feature_noise(rng), 6));
        }
        facts.add({"Frame", {r.id, frame}}, 1.0);
        for (std::size_t j = 0; j < p.distractors; ++j) {
          facts.add({"Distract" + std::to_string(j), {r.id, activity_names[pick_class(rng)]}}, 1.0);
        }
        d.data.push_back(std::move(r));
      }
    }
    // Proximity within a frame and across consecutive frames.
    auto closeness = [](const std::array<double, 2>& a, const std::array<double, 2>& b) {
      const double dx = a[0] - b[0], dy = a[1] - b[1];
      return std::exp(-(dx * dx + dy * dy) / (2.0 * 0.15 * 0.15));
    };
    const std::size_t n = last - first;
    for (std::size_t f1 = 0; f1 < n; ++f1) {
      for (std::size_t f2 = 0; f2 < n; ++f2) {
        const bool adjacent = f1 + 1 == f2 || f2 + 1 == f1;
        if (f1 != f2 && !adjacent) continue;
        for (std::size_t b1 = 0; b1 < p.boxes_per_frame; ++b1) {
          for (std::size_t b2 = 0; b2 < p.boxes_per_frame; ++b2) {
            const auto n1 = box_name(first + f1, b1), n2 = box_name(first + f2, b2);
            if (adjacent) facts.add({"Sequence", {n1, n2}}, 1.0);
            if (p.boxes_per_frame < 2 || (f1 == f2 && b1 == b2)) continue;
            const double c = round_to(closeness(placed[f1][b1], placed[f2][b2]), 3);
            if (c >= 0.5) facts.add({"Close", {n1, n2}}, c);
          }
        }
      }
    }
  }

  std::ostringstream rules;
  rules << "predicate: Frame/2 closed .\n"
           "predicate: FLabel/2 closed .\n"
           "predicate: Close/2 closed .\n"
           "predicate: Sequence/2 closed .\n"
           "predicate: Dnn/2 closed .\n";
  for (std::size_t j = 0; j < p.distractors; ++j) rules << "predicate: Distract" << j << "/2 closed .\n";
  rules << "LEARN :: Frame(B, F) & FLabel(F, A) -> Doing(B, A) .\n"
           "LEARN :: Doing(B1, A) & Close(B1, B2) -> Doing(B2, A) .\n"
           "LEARN :: Sequence(B1, B2) & Close(B1, B2) -> Same(B1, B2) .\n"
           "LEARN :: Doing(B1, A) & Same(B1, B2) -> Doing(B2, A) .\n"
           "LEARN :: Dnn(B, A) -> Doing(B, A) .\n";
  for (std::size_t j = 0; j < p.distractors; ++j) rules << "LEARN :: Distract" << j << "(B, A) -> Doing(B, A) .\n";
  rules << "constraint: Doing(B, +A) = 1 .\n";
  task.theory = logic::parse_theory(rules.str());

  auto& m = task.mapping;
  m.task = neural::Task::classification;
  m.target = AtomTemplate::parse("Doing(@0, *)");
  m.classes.assign(activity_names.begin(), activity_names.begin() + static_cast<std::ptrdiff_t>(p.classes));
  m.neural_atom = AtomTemplate::parse("Dnn(@0, *)");
  return task;
}

void write_task(const std::string& dir, const SyntheticTask& task) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  auto open = [&](const std::string& name) {
    std::ofstream out(fs::path(dir) / name);
    if (!out) throw std::runtime_error("cannot write " + (fs::path(dir) / name).string());
    return out;
  };
  {
    auto out = open("data.tsv");
    write_data(out, task.data);
  }
  {
    auto out = open("facts.tsv");
    write_facts(out, task.data);
  }
  {
    auto out = open("rules.psl");
    out << logic::format_theory(task.theory);
  }
  {
    auto out = open("mapping.ini");
    ptree root;
    root.add_child("mapping", task.mapping.to_ptree());
    boost::property_tree::write_ini(out, root);
  }
}

}  // namespace concordia::harness
