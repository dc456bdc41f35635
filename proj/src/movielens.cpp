#include <cctype>
#include <fstream>
#include <unordered_map>

#include "metaemb/errors.hpp"
#include "metaemb/loaders.hpp"

namespace metaemb {

namespace {

std::vector<std::string_view> split_fields(std::string_view line, std::string_view sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + sep.size();
  }
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return in;
}

[[noreturn]] void malformed(const std::filesystem::path& path, std::size_t line_no, const std::string& what) {
  throw ParseError(path.filename().string() + ":" + std::to_string(line_no) + ": " + what);
}

long parse_int(std::string_view s, const std::filesystem::path& path, std::size_t line_no) {
  if (s.empty()) malformed(path, line_no, "empty integer field");
  long v = 0;
  for (char c : s) {
    if (c < '0' || c > '9') malformed(path, line_no, "bad integer '" + std::string(s) + "'");
    v = v * 10 + (c - '0');
  }
  return v;
}

void strip_cr(std::string& line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
}

struct Movie {
  std::int32_t ad = 0;
  std::vector<std::int32_t> title;
  std::int32_t year = 0;
  std::vector<std::int32_t> genres;
};

struct User {
  std::int32_t id = 0, gender = 0, age = 0, occupation = 0;
};

}  // namespace

TitleParts parse_title(std::string_view title) {
  TitleParts parts;
  while (!title.empty() && title.back() == ' ') title.remove_suffix(1);
  if (title.size() >= 6 && title.back() == ')' && title[title.size() - 6] == '(') {
    auto year = title.substr(title.size() - 5, 4);
    bool digits = true;
    for (char c : year) digits = digits && c >= '0' && c <= '9';
    if (digits) {
      parts.year = std::string(year);
      title = title.substr(0, title.size() - 6);
    }
  }
  std::string cur;
  for (char ch : title) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      parts.tokens.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) parts.tokens.push_back(std::move(cur));
  return parts;
}

Dataset load_movielens(const std::filesystem::path& ratings, const std::filesystem::path& movies,
                       const std::filesystem::path& users) {
  Vocabulary movie_vocab, title_vocab, year_vocab, genre_vocab;
  Vocabulary user_vocab, age_vocab, gender_vocab, occupation_vocab;
  std::unordered_map<long, Movie> movie_by_id;
  std::unordered_map<long, User> user_by_id;
  std::vector<std::string> ad_names{"<unk>"};

  std::string line;
  {
    auto in = open_input(movies);
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      strip_cr(line);
      if (line.empty()) continue;
      auto f = split_fields(line, "::");
      if (f.size() != 3) malformed(movies, line_no, "expected MovieID::Title::Genres");
      const long id = parse_int(f[0], movies, line_no);
      Movie m;
      m.ad = movie_vocab.intern(std::string(f[0]));
      if (static_cast<std::size_t>(m.ad) == ad_names.size()) ad_names.emplace_back(f[0]);
      auto title = parse_title(f[1]);
      for (const auto& t : title.tokens) m.title.push_back(title_vocab.intern(t));
      m.year = title.year.empty() ? 0 : year_vocab.intern(title.year);
      if (!f[2].empty()) {
        for (auto g : split_fields(f[2], "|")) m.genres.push_back(genre_vocab.intern(std::string(g)));
      }
      if (!movie_by_id.emplace(id, std::move(m)).second) malformed(movies, line_no, "duplicate movie id");
    }
  }
  {
    auto in = open_input(users);
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      strip_cr(line);
      if (line.empty()) continue;
      auto f = split_fields(line, "::");
      if (f.size() != 5) malformed(users, line_no, "expected UserID::Gender::Age::Occupation::Zip-code");
      const long id = parse_int(f[0], users, line_no);
      User u;
      u.id = user_vocab.intern(std::string(f[0]));
      u.gender = gender_vocab.intern(std::string(f[1]));
      u.age = age_vocab.intern(std::string(f[2]));
      u.occupation = occupation_vocab.intern(std::string(f[3]));
      if (!user_by_id.emplace(id, u).second) malformed(users, line_no, "duplicate user id");
    }
  }

  Schema schema({
      {"movie_id", FieldKind::categorical, movie_vocab.size(), FieldGroup::ad_id},
      {"title", FieldKind::token_list, title_vocab.size(), FieldGroup::ad_feature},
      {"year", FieldKind::categorical, year_vocab.size(), FieldGroup::ad_feature},
      {"genres", FieldKind::token_list, genre_vocab.size(), FieldGroup::ad_feature},
      {"user_id", FieldKind::categorical, user_vocab.size(), FieldGroup::other_feature},
      {"age", FieldKind::categorical, age_vocab.size(), FieldGroup::other_feature},
      {"gender", FieldKind::categorical, gender_vocab.size(), FieldGroup::other_feature},
      {"occupation", FieldKind::categorical, occupation_vocab.size(), FieldGroup::other_feature},
  });
  Dataset data(std::move(schema));
  data.set_ad_names(std::move(ad_names));

  auto in = open_input(ratings);
  std::size_t line_no = 0;
  Instance inst;
  inst.values.resize(8);
  while (std::getline(in, line)) {
    ++line_no;
    strip_cr(line);
    if (line.empty()) continue;
    auto f = split_fields(line, "::");
    if (f.size() != 4) malformed(ratings, line_no, "expected UserID::MovieID::Rating::Timestamp");
    const long user_id = parse_int(f[0], ratings, line_no);
    const long movie_id = parse_int(f[1], ratings, line_no);
    const long rating = parse_int(f[2], ratings, line_no);
    if (rating < 1 || rating > 5) malformed(ratings, line_no, "rating outside 1..5");
    auto mit = movie_by_id.find(movie_id);
    if (mit == movie_by_id.end()) malformed(ratings, line_no, "unknown movie id " + std::to_string(movie_id));
    auto uit = user_by_id.find(user_id);
    if (uit == user_by_id.end()) malformed(ratings, line_no, "unknown user id " + std::to_string(user_id));
    const Movie& m = mit->second;
    const User& u = uit->second;
    inst.ad_id = m.ad;
    inst.label = rating >= 4 ? 1 : 0;
    inst.values[0] = {m.ad};
    inst.values[1] = m.title;
    inst.values[2] = {m.year};
    inst.values[3] = m.genres;
    inst.values[4] = {u.id};
    inst.values[5] = {u.age};
    inst.values[6] = {u.gender};
    inst.values[7] = {u.occupation};
    data.add(inst);
  }
  return data;
}

Dataset load_movielens_dir(const std::filesystem::path& dir) {
  return load_movielens(dir / "ratings.dat", dir / "movies.dat", dir / "users.dat");
}

}  // namespace metaemb
