#include "fhlr/annotation_service.hpp"

#include <httplib.h>  // after Eigen, see tools/fhlr.cpp
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <random>
#include <set>

#include "fhlr/oracle.hpp"

namespace fhlr {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string session_key(const std::string& dataset, const IndexList& indices, const std::string& nonce) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const std::string& s) {
    for (unsigned char c : s) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0xff;
    h *= 0x100000001b3ULL;
  };
  mix(dataset);
  for (std::size_t i : indices) mix(std::to_string(i));
  mix(nonce);
  char buf[20];
  std::snprintf(buf, sizeof buf, "s%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string random_nonce() {
  std::random_device rd;
  char buf[20];
  std::snprintf(buf, sizeof buf, "%08x%08x", rd(), rd());
  return buf;
}

void apply_labels(AnnotationSession& s, const std::string& annotator, const std::vector<LabelSubmission>& labels) {
  for (const auto& l : labels) s.votes[l.index][annotator] = l.label;
}

std::vector<LabelSubmission> labels_from_record(const json& j) {
  std::vector<LabelSubmission> out;
  for (const auto& pair : j.at("labels")) out.push_back({pair.at(0).get<std::size_t>(), pair.at(1).get<int>()});
  return out;
}

}  // namespace

std::size_t AnnotationSession::labeled_count() const {
  std::size_t n = 0;
  for (std::size_t i : indices)
    if (auto it = votes.find(i); it != votes.end() && !it->second.empty()) ++n;
  return n;
}

AnnotationStore::AnnotationStore(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_ / "sessions");
  replay();
}

void AnnotationStore::register_dataset(const std::string& name, std::shared_ptr<const WindowedDataset> ds) {
  require(ds != nullptr, ErrorCode::invalid_input, "null dataset");
  std::unique_lock lock(mutex_);
  datasets_[name] = std::move(ds);
}

bool AnnotationStore::has_dataset(const std::string& name) const {
  std::shared_lock lock(mutex_);
  return datasets_.count(name) > 0;
}

std::shared_ptr<AnnotationStore::Entry> AnnotationStore::find(const std::string& id) const {
  std::shared_lock lock(mutex_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) fail(ErrorCode::not_found, "unknown session '" + id + "'");
  return it->second;
}

void AnnotationStore::append(const Entry& entry, const json& record) const {
  const std::string line = record.dump() + "\n";
  std::FILE* f = std::fopen(entry.log_path.c_str(), "ab");
  require(f != nullptr, ErrorCode::io, "cannot open " + entry.log_path.string());
  const bool ok = std::fwrite(line.data(), 1, line.size(), f) == line.size() && std::fflush(f) == 0 &&
                  ::fsync(fileno(f)) == 0;
  std::fclose(f);
  require(ok, ErrorCode::io, "failed to persist to " + entry.log_path.string());
}

std::string AnnotationStore::create_session(const SessionRequest& request) {
  require(!request.indices.empty(), ErrorCode::invalid_input, "session needs at least one index");
  std::shared_ptr<const WindowedDataset> ds;
  {
    std::shared_lock lock(mutex_);
    auto it = datasets_.find(request.dataset);
    if (it == datasets_.end()) fail(ErrorCode::not_found, "unknown dataset '" + request.dataset + "'");
    ds = it->second;
  }
  std::set<std::size_t> seen;
  for (std::size_t i : request.indices) {
    require(i < static_cast<std::size_t>(ds->size()), ErrorCode::invalid_input,
            "index " + std::to_string(i) + " is outside the dataset");
    require(seen.insert(i).second, ErrorCode::invalid_input, "duplicate index " + std::to_string(i));
  }
  std::vector<std::string> names = request.class_names;
  if (names.empty())
    for (int k = 0; k < ds->num_classes; ++k) names.push_back("class " + std::to_string(k));
  require(static_cast<int>(names.size()) == ds->num_classes, ErrorCode::invalid_input,
          "expected " + std::to_string(ds->num_classes) + " class names");

  auto entry = std::make_shared<Entry>();
  AnnotationSession& s = entry->session;
  s.dataset = request.dataset;
  s.nonce = request.nonce.empty() ? random_nonce() : request.nonce;
  s.indices = request.indices;
  s.class_names = names;
  s.id = session_key(s.dataset, s.indices, s.nonce);
  s.created_at = utc_now();

  std::unique_lock lock(mutex_);
  if (sessions_.count(s.id)) fail(ErrorCode::conflict, "session for this dataset, selection and nonce already exists");
  const fs::path dir = root_ / "sessions" / s.id;
  fs::create_directories(dir);
  entry->log_path = dir / "log.jsonl";
  append(*entry, {{"type", "create"}, {"id", s.id}, {"dataset", s.dataset}, {"nonce", s.nonce},
                  {"indices", s.indices}, {"class_names", s.class_names}, {"at", s.created_at}});
  sessions_[s.id] = entry;
  return s.id;
}

AnnotationSession AnnotationStore::get_session(const std::string& id) const {
  auto entry = find(id);
  std::lock_guard lock(entry->mutex);
  return entry->session;
}

std::vector<std::string> AnnotationStore::session_ids() const {
  std::shared_lock lock(mutex_);
  std::vector<std::string> ids;
  for (const auto& [id, _] : sessions_) ids.push_back(id);
  return ids;
}

json AnnotationStore::next_batch(const std::string& id, const std::string& annotator, std::size_t size) const {
  require(!annotator.empty(), ErrorCode::invalid_input, "annotator is required");
  require(size >= 1, ErrorCode::invalid_input, "batch size must be >= 1");
  const AnnotationSession s = get_session(id);
  require(s.status == SessionStatus::open, ErrorCode::closed, "session is finalized");
  std::shared_ptr<const WindowedDataset> ds;
  {
    std::shared_lock lock(mutex_);
    auto it = datasets_.find(s.dataset);
    if (it == datasets_.end()) fail(ErrorCode::not_found, "dataset '" + s.dataset + "' is not loaded");
    ds = it->second;
  }
  IndexList unseen, seen_by_others;
  for (std::size_t i : s.indices) {
    auto it = s.votes.find(i);
    if (it == s.votes.end() || it->second.empty()) unseen.push_back(i);
    else if (!it->second.count(annotator)) seen_by_others.push_back(i);
  }
  unseen.insert(unseen.end(), seen_by_others.begin(), seen_by_others.end());
  json items = json::array();
  for (std::size_t k = 0; k < std::min(size, unseen.size()); ++k)
    items.push_back(window_payload(*ds, unseen[k], s.class_names));
  return items;
}

std::size_t AnnotationStore::submit_labels(const std::string& id, const std::string& annotator,
                                           const std::vector<LabelSubmission>& labels) {
  require(!annotator.empty(), ErrorCode::invalid_input, "annotator is required");
  require(!labels.empty(), ErrorCode::invalid_input, "no labels submitted");
  auto entry = find(id);
  std::lock_guard lock(entry->mutex);
  AnnotationSession& s = entry->session;
  require(s.status == SessionStatus::open, ErrorCode::closed, "session is finalized");
  const std::set<std::size_t> members(s.indices.begin(), s.indices.end());
  json pairs = json::array();
  for (const auto& l : labels) {
    require(members.count(l.index) > 0, ErrorCode::invalid_input,
            "index " + std::to_string(l.index) + " is not part of the session");
    require(l.label >= 0 && l.label < s.num_classes(), ErrorCode::invalid_label,
            "label " + std::to_string(l.label) + " outside [0, " + std::to_string(s.num_classes()) + ")");
    pairs.push_back({l.index, l.label});
  }
  append(*entry, {{"type", "labels"}, {"annotator", annotator}, {"labels", pairs}});
  apply_labels(s, annotator, labels);
  return s.labeled_count();
}

FinalizeResult AnnotationStore::finalize_session(const std::string& id) {
  auto entry = find(id);
  std::lock_guard lock(entry->mutex);
  AnnotationSession& s = entry->session;
  require(s.status == SessionStatus::open, ErrorCode::closed, "session is already finalized");
  const std::size_t missing = s.indices.size() - s.labeled_count();
  require(missing == 0, ErrorCode::incomplete, std::to_string(missing) + " items have no label yet");

  FinalizeResult out;
  out.expert_set.indices = s.indices;
  out.expert_set.source = ExpertSource::live_ui;
  std::size_t raters = s.votes.at(s.indices.front()).size();
  bool uniform = true;
  for (std::size_t i : s.indices) {
    std::vector<int> v;
    for (const auto& [_, label] : s.votes.at(i)) v.push_back(label);  // annotator-id order
    uniform = uniform && v.size() == raters;
    out.expert_set.corrected_labels.push_back(majority_vote(v, s.num_classes()));
    out.expert_set.votes.push_back(std::move(v));
  }
  // Fleiss' statistic assumes a constant number of ratings per item.
  if (uniform && raters >= 2) {
    AnnotationMatrix m;
    m.votes.resize(static_cast<Index>(s.indices.size()), static_cast<Index>(raters));
    for (std::size_t r = 0; r < s.indices.size(); ++r)
      for (std::size_t a = 0; a < raters; ++a) m.votes(static_cast<Index>(r), static_cast<Index>(a)) = out.expert_set.votes[r][a];
    out.kappa = fleiss_kappa(m, s.num_classes());
  }
  const std::string at = utc_now();
  append(*entry, {{"type", "finalize"}, {"at", at}, {"expert_set", out.expert_set},
                  {"kappa", out.kappa ? json(*out.kappa) : json(nullptr)}});
  s.status = SessionStatus::finalized;
  s.finalized_at = at;
  s.expert_set = out.expert_set;
  s.kappa = out.kappa;
  std::ofstream(entry->log_path.parent_path() / "expert_set.json") << json(out.expert_set).dump(2) << '\n';
  return out;
}

json AnnotationStore::progress(const std::string& id) const {
  const AnnotationSession s = get_session(id);
  std::map<std::string, std::size_t> per_annotator;
  for (const auto& [_, by_annotator] : s.votes)
    for (const auto& [a, __] : by_annotator) ++per_annotator[a];
  const std::size_t labeled = s.labeled_count();
  return {{"session_id", s.id},
          {"status", std::string(to_string(s.status))},
          {"total", s.indices.size()},
          {"labeled", labeled},
          {"pending", s.indices.size() - labeled},
          {"annotators", per_annotator}};
}

void AnnotationStore::replay() {
  for (const auto& dir : fs::directory_iterator(root_ / "sessions")) {
    const fs::path log = dir.path() / "log.jsonl";
    if (!fs::exists(log)) continue;
    auto entry = std::make_shared<Entry>();
    entry->log_path = log;
    AnnotationSession& s = entry->session;
    std::ifstream in(log);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line))
      if (!line.empty()) lines.push_back(line);
    for (std::size_t k = 0; k < lines.size(); ++k) {
      json r;
      try {
        r = json::parse(lines[k]);
      } catch (const json::exception&) {
        // A torn final line was never acknowledged; anything earlier is corruption.
        if (k + 1 == lines.size()) break;
        fail(ErrorCode::io, "corrupt session log " + log.string());
      }
      const std::string type = r.at("type").get<std::string>();
      if (type == "create") {
        s.id = r.at("id").get<std::string>();
        s.dataset = r.at("dataset").get<std::string>();
        s.nonce = r.at("nonce").get<std::string>();
        s.indices = r.at("indices").get<IndexList>();
        s.class_names = r.at("class_names").get<std::vector<std::string>>();
        s.created_at = r.at("at").get<std::string>();
      } else if (type == "labels") {
        apply_labels(s, r.at("annotator").get<std::string>(), labels_from_record(r));
      } else if (type == "finalize") {
        s.status = SessionStatus::finalized;
        s.finalized_at = r.at("at").get<std::string>();
        s.expert_set = r.at("expert_set").get<ExpertSet>();
        if (!r.at("kappa").is_null()) s.kappa = r.at("kappa").get<double>();
      }
    }
    if (!s.id.empty()) sessions_[s.id] = entry;
  }
}

json window_payload(const WindowedDataset& ds, std::size_t index, const std::vector<std::string>& class_names) {
  require(index < static_cast<std::size_t>(ds.size()), ErrorCode::invalid_input, "window index out of range");
  const auto w = ds.X.window(static_cast<Index>(index));
  std::vector<std::vector<float>> channels(static_cast<std::size_t>(w.rows()));
  for (Index c = 0; c < w.rows(); ++c) channels[static_cast<std::size_t>(c)].assign(w.row(c).data(), w.row(c).data() + w.cols());
  json j = {{"index", index}, {"channels", channels}, {"sample_rate_hz", ds.sample_rate_hz}, {"class_names", class_names}};
  if (!ds.channel_names.empty()) j["channel_names"] = ds.channel_names;
  return j;
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::not_found: return 404;
    case ErrorCode::conflict:
    case ErrorCode::closed:
    case ErrorCode::incomplete: return 409;
    case ErrorCode::io:
    case ErrorCode::divergence: return 500;
    default: return 400;
  }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Handler>
httplib::Server::Handler guarded(Handler handler) {
  return [handler](const httplib::Request& req, httplib::Response& res) {
    try {
      handler(req, res);
    } catch (const Error& e) {
      send_json(res, http_status(e.code()), {{"error", std::string(to_string(e.code()))}, {"detail", e.detail()}});
    } catch (const json::exception& e) {
      send_json(res, 400, {{"error", "invalid_input"}, {"detail", e.what()}});
    }
  };
}

json parse_body(const httplib::Request& req) {
  try {
    return req.body.empty() ? json::object() : json::parse(req.body);
  } catch (const json::exception& e) {
    fail(ErrorCode::invalid_input, std::string("malformed JSON body: ") + e.what());
  }
}

}  // namespace

void install_routes(httplib::Server& server, AnnotationStore& store) {
  server.Post("/sessions", guarded([&store](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    SessionRequest r;
    r.dataset = body.at("dataset").get<std::string>();
    if (body.contains("indices")) r.indices = body.at("indices").get<IndexList>();
    else if (body.contains("selection")) r.indices = body.at("selection").at("indices").get<IndexList>();
    r.class_names = body.value("class_names", std::vector<std::string>{});
    r.nonce = body.value("nonce", std::string());
    const std::string id = store.create_session(r);
    send_json(res, 201, {{"session_id", id}, {"pending", r.indices.size()}});
  }));

  server.Get(R"(/sessions/([^/]+))", guarded([&store](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, store.get_session(req.matches[1]));
  }));

  server.Get(R"(/sessions/([^/]+)/batch)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
    const std::string annotator = req.get_param_value("annotator");
    std::size_t size = 10;
    if (req.has_param("size")) {
      try {
        const long long v = std::stoll(req.get_param_value("size"));
        require(v >= 1, ErrorCode::invalid_input, "size must be >= 1");
        size = static_cast<std::size_t>(v);
      } catch (const std::logic_error&) {
        fail(ErrorCode::invalid_input, "size must be an integer");
      }
    }
    send_json(res, 200, {{"items", store.next_batch(req.matches[1], annotator, size)}});
  }));

  server.Post(R"(/sessions/([^/]+)/labels)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
    const json body = parse_body(req);
    std::vector<LabelSubmission> labels;
    for (const auto& l : body.at("labels")) labels.push_back({l.at("index").get<std::size_t>(), l.at("label").get<int>()});
    const std::string id = req.matches[1];
    const std::size_t labeled = store.submit_labels(id, body.at("annotator").get<std::string>(), labels);
    send_json(res, 200, {{"ack", true}, {"accepted", labels.size()}, {"labeled", labeled},
                         {"total", store.get_session(id).indices.size()}});
  }));

  server.Post(R"(/sessions/([^/]+)/finalize)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
    const FinalizeResult r = store.finalize_session(req.matches[1]);
    send_json(res, 200, {{"expert_set", r.expert_set}, {"kappa", r.kappa ? json(*r.kappa) : json(nullptr)}});
  }));

  server.Get(R"(/sessions/([^/]+)/progress)", guarded([&store](const httplib::Request& req, httplib::Response& res) {
    send_json(res, 200, store.progress(req.matches[1]));
  }));
}

std::string_view to_string(SessionStatus s) { return s == SessionStatus::open ? "open" : "finalized"; }

void to_json(json& j, const AnnotationSession& s) {
  json votes = json::object();
  for (const auto& [index, by_annotator] : s.votes) votes[std::to_string(index)] = by_annotator;
  j = {{"session_id", s.id},
       {"dataset", s.dataset},
       {"indices", s.indices},
       {"class_names", s.class_names},
       {"status", std::string(to_string(s.status))},
       {"created_at", s.created_at},
       {"finalized_at", s.finalized_at.empty() ? json(nullptr) : json(s.finalized_at)},
       {"votes", votes},
       {"labeled", s.labeled_count()}};
  if (s.expert_set) j["expert_set"] = *s.expert_set;
  if (s.kappa) j["kappa"] = *s.kappa;
}

}  // namespace fhlr
