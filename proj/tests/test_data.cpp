#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "metaemb/errors.hpp"
#include "metaemb/loaders.hpp"
#include "metaemb/random.hpp"
#include "metaemb/split.hpp"
#include "metaemb/synthetic.hpp"

using namespace metaemb;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("metaemb_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

Schema two_field_schema(std::size_t ads, std::size_t vocab) {
  return Schema({{"ad", FieldKind::categorical, ads, FieldGroup::ad_id},
                 {"tok", FieldKind::token_list, vocab, FieldGroup::other_feature}});
}

// Groups with the given sample counts over a flat row numbering.
std::vector<AdGroup> groups_with_counts(const std::vector<std::size_t>& counts) {
  std::vector<AdGroup> out;
  std::size_t next = 0;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    AdGroup g{static_cast<std::int32_t>(i + 1), {}};
    for (std::size_t r = 0; r < counts[i]; ++r) g.rows.push_back(next++);
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace

TEST_CASE("rng streams are reproducible") {
  Rng a(5489);
  for (int i = 0; i < 9999; ++i) a();
  CHECK(a() == 9981545732273789042ULL);

  CHECK(derive_seed(7, "x") == derive_seed(7, "x"));
  CHECK(derive_seed(7, "x") != derive_seed(7, "y"));
  CHECK(derive_seed(7, std::uint64_t{1}) != derive_seed(8, std::uint64_t{1}));

  Rng r(1);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) counts[uniform_index(r, 7)]++;
  for (int c : counts) CHECK(std::abs(c - 10000) < 500);

  std::vector<int> v(20), w(20);
  for (int i = 0; i < 20; ++i) v[i] = w[i] = i;
  Rng s1(3), s2(3);
  shuffle(v, s1);
  shuffle(w, s2);
  CHECK(v == w);
  CHECK(std::set<int>(v.begin(), v.end()).size() == 20);
}

TEST_CASE("schema validation") {
  CHECK_THROWS_AS(Schema({{"a", FieldKind::categorical, 3, FieldGroup::other_feature}}), ValidationError);
  CHECK_THROWS_AS(Schema({{"a", FieldKind::categorical, 3, FieldGroup::ad_id},
                          {"b", FieldKind::categorical, 3, FieldGroup::ad_id}}),
                  ValidationError);
  CHECK_THROWS_AS(Schema({{"a", FieldKind::categorical, 3, FieldGroup::ad_id},
                          {"a", FieldKind::categorical, 3, FieldGroup::other_feature}}),
                  ValidationError);
  CHECK_THROWS_AS(Schema({{"a", FieldKind::token_list, 3, FieldGroup::ad_id}}), ValidationError);
  Schema s = two_field_schema(4, 5);
  CHECK(s.ad_id_field() == 0);
  CHECK(s.index_of("tok") == 1);
  CHECK_THROWS(s.index_of("nope"));
  CHECK(parse_field_kind(to_string(FieldKind::token_list)) == FieldKind::token_list);
  CHECK(parse_field_group(to_string(FieldGroup::ad_feature)) == FieldGroup::ad_feature);
}

TEST_CASE("dataset stores instances and rejects bad ones") {
  Dataset d(two_field_schema(4, 5));
  Instance a{2, {{2}, {1, 3, 3}}, 1};
  Instance b{3, {{3}, {}}, 0};
  d.add(a);
  d.add(b);
  CHECK(d.size() == 2);
  CHECK(d.instance(0) == a);
  CHECK(d.instance(1) == b);
  CHECK(d.values(0, 1).size() == 3);

  CHECK_THROWS_AS(d.add({1, {{1}, {1}}, 2}), ValidationError);
  CHECK_THROWS_AS(d.add({1, {{2}, {1}}, 0}), ValidationError);
  CHECK_THROWS_AS(d.add({1, {{1}, {5}}, 0}), IndexError);
  CHECK_THROWS_AS(d.add({1, {{1}, {-1}}, 0}), IndexError);
  CHECK_THROWS_AS(d.add({4, {{4}, {1}}, 0}), IndexError);
  CHECK_THROWS_AS(d.add({1, {{1}}, 0}), ValidationError);
  CHECK(d.size() == 2);

  d.mask_unknown(1, {1, 0, 1, 0, 1});
  CHECK(d.instance(0).values[1] == std::vector<std::int32_t>{0, 0, 0});

  Vocabulary v;
  CHECK(v.intern("x") == 1);
  CHECK(v.intern("y") == 2);
  CHECK(v.intern("x") == 1);
  CHECK(v.find("z") == 0);
  CHECK(v.size() == 3);
}

TEST_CASE("old/new split boundaries") {
  SplitSpec spec;  // N = 300, N_min = 80, K = 20
  auto split = split_old_new(groups_with_counts({301, 300, 81, 80, 5, 1000}), spec);
  std::vector<std::int32_t> old_ids, new_ids, dropped;
  for (auto& g : split.old_groups) old_ids.push_back(g.ad_id);
  for (auto& g : split.new_groups) new_ids.push_back(g.ad_id);
  for (auto& g : split.discarded) dropped.push_back(g.ad_id);
  CHECK(old_ids == std::vector<std::int32_t>{1, 6});
  CHECK(new_ids == std::vector<std::int32_t>{2, 3});
  CHECK(dropped == std::vector<std::int32_t>{4, 5});
  CHECK(split.old_samples() == 1301);
  CHECK(split.new_samples() == 381);

  CHECK_THROWS_AS((SplitSpec{300, 60, 20}.validate()), ValidationError);
  CHECK_THROWS_AS((SplitSpec{80, 80, 20}.validate()), ValidationError);
  CHECK_NOTHROW((SplitSpec{300, 61, 20}.validate()));
}

TEST_CASE("warm-up carve") {
  auto groups = groups_with_counts({100});
  auto c = carve_warmup(groups[0], 20, 11);
  CHECK(c.batch_a.size() == 20);
  CHECK(c.batch_b.size() == 20);
  CHECK(c.batch_c.size() == 20);
  CHECK(c.holdout.size() == 40);
  std::set<std::size_t> all;
  for (auto* part : {&c.batch_a, &c.batch_b, &c.batch_c, &c.holdout}) all.insert(part->begin(), part->end());
  CHECK(all.size() == 100);

  auto again = carve_warmup(groups[0], 20, 11);
  CHECK(again.batch_a == c.batch_a);
  CHECK(again.holdout == c.holdout);
  auto other = carve_warmup(groups[0], 20, 12);
  CHECK(other.batch_a != c.batch_a);

  auto tight = groups_with_counts({60});
  CHECK_THROWS_AS(carve_warmup(tight[0], 20, 1), ValidationError);
}

TEST_CASE("meta pairs are disjoint") {
  auto groups = groups_with_counts({45});
  Rng rng(9);
  for (int i = 0; i < 1000; ++i) {
    auto pair = sample_meta_pair(groups[0], 20, rng);
    REQUIRE(pair);
    REQUIRE(pair->batch_a.size() == 20);
    REQUIRE(pair->batch_b.size() == 20);
    std::set<std::size_t> seen(pair->batch_a.begin(), pair->batch_a.end());
    seen.insert(pair->batch_b.begin(), pair->batch_b.end());
    REQUIRE(seen.size() == 40);
  }
  auto small = groups_with_counts({39});
  CHECK_FALSE(sample_meta_pair(small[0], 20, rng).has_value());
}

TEST_CASE("features unseen among old ads are masked") {
  Dataset d(two_field_schema(4, 6));
  d.add({1, {{1}, {1, 2}}, 1});
  d.add({2, {{2}, {3, 4}}, 0});
  d.add({2, {{2}, {1, 5}}, 0});
  auto groups = group_by_ad(d);
  REQUIRE(groups.size() == 2);
  mask_unseen_features(d, std::span<const AdGroup>(groups.data(), 1));
  CHECK(d.instance(1).values[1] == std::vector<std::int32_t>{0, 0});
  CHECK(d.instance(2).values[1] == std::vector<std::int32_t>{1, 0});
  CHECK(d.instance(1).ad_id == 2);
}

TEST_CASE("split manifest round trip") {
  SynthConfig cfg;
  cfg.n_ads = 12;
  cfg.samples_per_ad = 320;
  cfg.n_new_ads = 6;
  cfg.new_ad_samples = 90;
  auto synth = synth_generate(cfg);
  auto manifest = make_manifest(synth.data, SplitSpec{}, 5);
  CHECK(manifest.split.old_groups.size() == 6);
  CHECK(manifest.split.new_groups.size() == 6);
  CHECK(manifest.carves.size() == 6);

  auto dir = scratch_dir("manifest");
  write_manifest(dir / "split.json", manifest, synth.data);
  auto back = read_manifest(dir / "split.json", synth.data);
  CHECK(back.seed == 5);
  CHECK(back.dataset_fingerprint == manifest.dataset_fingerprint);
  REQUIRE(back.carves.size() == manifest.carves.size());
  for (std::size_t i = 0; i < back.carves.size(); ++i) {
    CHECK(back.carves[i].batch_a == manifest.carves[i].batch_a);
    CHECK(back.carves[i].holdout == manifest.carves[i].holdout);
  }
  REQUIRE(back.split.old_groups.size() == 6);
  CHECK(back.split.old_groups[2].rows == manifest.split.old_groups[2].rows);

  cfg.seed = 2;
  auto other = synth_generate(cfg);
  CHECK_THROWS_AS(read_manifest(dir / "split.json", other.data), ValidationError);
}

TEST_CASE("title parsing") {
  auto t = parse_title("Toy Story (1995)");
  CHECK(t.year == "1995");
  CHECK(t.tokens == std::vector<std::string>{"toy", "story"});
  auto u = parse_title("City of Lost Children, The (Cit\xe9 des enfants perdus, La) (1995)");
  CHECK(u.year == "1995");
  CHECK(u.tokens.size() == 10);
  CHECK(u.tokens[5] == "cit\xe9");
  auto w = parse_title("Untitled");
  CHECK(w.year.empty());
  CHECK(w.tokens == std::vector<std::string>{"untitled"});
}

TEST_CASE("movielens loader") {
  auto dir = scratch_dir("ml");
  write_file(dir / "movies.dat",
             "1::Toy Story (1995)::Animation|Children's|Comedy\n"
             "2::Jumanji (1995)::Adventure|Children's|Fantasy\n");
  write_file(dir / "users.dat", "1::F::1::10::48067\n2::M::56::16::70072\n");
  write_file(dir / "ratings.dat", "1::1::5::978300760\n2::1::3::978302109\n2::2::4::978301968\n");
  Dataset d = load_movielens_dir(dir);
  CHECK(d.size() == 3);
  CHECK(d.schema().size() == 8);
  CHECK(d.schema().field(d.schema().ad_id_field()).name == "movie_id");
  CHECK(d.label(0) == 1);
  CHECK(d.label(1) == 0);
  CHECK(d.label(2) == 1);
  CHECK(d.ad_id(0) == d.ad_id(1));
  CHECK(d.ad_id(0) != d.ad_id(2));
  CHECK(d.values(0, d.schema().index_of("genres")).size() == 3);
  CHECK(d.values(0, d.schema().index_of("title")).size() == 2);
  CHECK(d.ad_names().at(static_cast<std::size_t>(d.ad_id(2))) == "2");

  write_file(dir / "ratings.dat", "1::1::5::978300760\n2::1::x::978302109\n");
  try {
    load_movielens_dir(dir);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("ratings.dat:2") != std::string::npos);
  }
  write_file(dir / "ratings.dat", "1::9::5::978300760\n");
  CHECK_THROWS_AS(load_movielens_dir(dir), ParseError);
}

TEST_CASE("csv dataset round trip") {
  SynthConfig cfg;
  cfg.n_ads = 5;
  cfg.samples_per_ad = 30;
  auto synth = synth_generate(cfg);
  auto dir = scratch_dir("csv");
  write_csv_dataset(synth.data, dir / "d.csv", dir / "d.json");
  Dataset back = load_csv_dataset(dir / "d.csv", dir / "d.json");
  CHECK(back.schema() == synth.data.schema());
  REQUIRE(back.size() == synth.data.size());
  for (std::size_t r = 0; r < back.size(); ++r) REQUIRE(back.instance(r) == synth.data.instance(r));
  CHECK(dataset_fingerprint(back) == dataset_fingerprint(synth.data));

  write_file(dir / "e.json",
             R"({"label":"y","fields":[{"name":"ad","kind":"categorical","group":"ad_id"},)"
             R"({"name":"t","kind":"token_list","group":"other_feature"}]})");
  write_file(dir / "e.csv", "ad,t,y\nfoo,3 4,1\nbar,,0\nfoo,4,0\n");
  Dataset e = load_csv_dataset(dir / "e.csv", dir / "e.json");
  CHECK(e.size() == 3);
  CHECK(e.ad_id(0) == e.ad_id(2));
  CHECK(e.values(1, 1).empty());
  CHECK(e.schema().field(1).vocab_size == 3);
  write_file(dir / "e.csv", "ad,t,y\nfoo,3,7\n");
  CHECK_THROWS(load_csv_dataset(dir / "e.csv", dir / "e.json"));
}

TEST_CASE("synthetic generator") {
  SynthConfig cfg;
  cfg.n_ads = 10;
  cfg.samples_per_ad = 50;
  cfg.n_new_ads = 3;
  cfg.new_ad_samples = 7;
  auto a = synth_generate(cfg);
  auto b = synth_generate(cfg);
  CHECK(a.data.size() == 7 * 50 + 3 * 7);
  CHECK(dataset_fingerprint(a.data) == dataset_fingerprint(b.data));
  CHECK(a.truth.ctr.size() == a.data.size());
  // Per-ad features are constant within an ad.
  auto groups = group_by_ad(a.data);
  for (auto& g : groups)
    for (auto r : g.rows) CHECK(a.data.values(r, 1)[0] == a.data.values(g.rows[0], 1)[0]);
  cfg.n_new_ads = 11;
  CHECK_THROWS_AS(synth_generate(cfg), ValidationError);
}
