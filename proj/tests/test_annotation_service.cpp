#include <doctest.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <thread>

#include "fhlr/annotation_service.hpp"

// After Eigen: resolv.h (pulled in by httplib) defines a _res macro.
#include <httplib.h>

using namespace fhlr;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fhlr_ann_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::shared_ptr<const WindowedDataset> small_dataset() {
  SyntheticSpec s;
  s.num_classes = 3;
  s.channels = 2;
  s.window_length = 16;
  s.train_count = 12;
  s.test_count = 3;
  return std::make_shared<WindowedDataset>(make_synthetic(s).first);
}

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an error");
  return ErrorCode::io;
}

}  // namespace

TEST_CASE("create, batch, submit and finalize") {
  const auto root = scratch_dir("flow");
  AnnotationStore store(root);
  const auto ds = small_dataset();
  store.register_dataset("demo", ds);
  CHECK(store.has_dataset("demo"));

  const std::string id = store.create_session({"demo", {1, 4, 7}, {}, "n1"});
  CHECK(id.starts_with("s"));
  const auto s = store.get_session(id);
  CHECK(s.class_names == std::vector<std::string>{"class 0", "class 1", "class 2"});
  CHECK(s.status == SessionStatus::open);

  const json batch = store.next_batch(id, "ann", 2);
  REQUIRE(batch.size() == 2);
  CHECK(batch[0]["index"] == 1);
  CHECK(batch[0]["channels"].size() == 2);
  CHECK(batch[0]["channels"][0].size() == 16);
  CHECK(batch[0]["channels"][1][3].get<float>() == ds->X.window(1)(1, 3));

  CHECK(code_of([&] { store.finalize_session(id); }) == ErrorCode::incomplete);
  CHECK(store.submit_labels(id, "a", {{1, 0}, {4, 1}, {7, 2}}) == 3);
  CHECK(store.submit_labels(id, "b", {{1, 0}, {4, 2}, {7, 2}}) == 3);
  CHECK(store.submit_labels(id, "c", {{1, 1}, {4, 2}, {7, 2}}) == 3);
  CHECK(store.progress(id)["annotators"]["b"] == 3);

  const auto result = store.finalize_session(id);
  CHECK(result.expert_set.indices == IndexList{1, 4, 7});
  CHECK(result.expert_set.corrected_labels == Labels{0, 2, 2});
  CHECK(result.expert_set.source == ExpertSource::live_ui);
  REQUIRE(result.kappa.has_value());
  // Votes (0,0,1), (1,2,2), (2,2,2): P_bar = (1/3 + 1/3 + 1) / 3, category shares 2/9, 2/9, 5/9.
  const double p_bar = 5.0 / 9.0, p_e = (4.0 + 4.0 + 25.0) / 81.0;
  CHECK(*result.kappa == doctest::Approx((p_bar - p_e) / (1.0 - p_e)));

  CHECK(fs::exists(root / "sessions" / id / "expert_set.json"));
  CHECK(code_of([&] { store.submit_labels(id, "a", {{1, 1}}); }) == ErrorCode::closed);
  CHECK(code_of([&] { store.next_batch(id, "a", 1); }) == ErrorCode::closed);
  CHECK(code_of([&] { store.finalize_session(id); }) == ErrorCode::closed);
  fs::remove_all(root);
}

TEST_CASE("unanimous panels give kappa 1 and single raters give none") {
  const auto root = scratch_dir("kappa");
  AnnotationStore store(root);
  store.register_dataset("demo", small_dataset());
  const auto id = store.create_session({"demo", {0, 1, 2}, {}, "k"});
  store.submit_labels(id, "a", {{0, 0}, {1, 1}, {2, 2}});
  store.submit_labels(id, "b", {{0, 0}, {1, 1}, {2, 2}});
  CHECK(store.finalize_session(id).kappa == 1.0);

  const auto single = store.create_session({"demo", {0, 1}, {}, "single"});
  store.submit_labels(single, "a", {{0, 2}, {1, 1}});
  const auto r = store.finalize_session(single);
  CHECK_FALSE(r.kappa.has_value());
  CHECK(r.expert_set.corrected_labels == Labels{2, 1});
  fs::remove_all(root);
}

TEST_CASE("later votes from the same annotator overwrite earlier ones") {
  const auto root = scratch_dir("overwrite");
  AnnotationStore store(root);
  store.register_dataset("demo", small_dataset());
  const auto id = store.create_session({"demo", {3, 5}, {}, "o"});
  store.submit_labels(id, "a", {{3, 0}});
  store.submit_labels(id, "a", {{3, 2}, {5, 1}});
  const auto s = store.get_session(id);
  CHECK(s.votes.at(3).size() == 1);
  CHECK(s.votes.at(3).at("a") == 2);
  // Items this annotator already labeled are not offered again; others' items come after unseen ones.
  CHECK(store.next_batch(id, "a", 5).empty());
  store.submit_labels(id, "b", {{5, 1}});
  const json batch = store.next_batch(id, "c", 5);
  REQUIRE(batch.size() == 2);
  fs::remove_all(root);
}

TEST_CASE("request validation") {
  const auto root = scratch_dir("errors");
  AnnotationStore store(root);
  store.register_dataset("demo", small_dataset());
  CHECK(code_of([&] { store.create_session({"nope", {1}, {}, ""}); }) == ErrorCode::not_found);
  CHECK(code_of([&] { store.create_session({"demo", {}, {}, ""}); }) == ErrorCode::invalid_input);
  CHECK(code_of([&] { store.create_session({"demo", {12}, {}, ""}); }) == ErrorCode::invalid_input);
  CHECK(code_of([&] { store.create_session({"demo", {1, 1}, {}, ""}); }) == ErrorCode::invalid_input);
  CHECK(code_of([&] { store.create_session({"demo", {1}, {"a", "b"}, ""}); }) == ErrorCode::invalid_input);

  const auto id = store.create_session({"demo", {1, 2}, {"wake", "light", "deep"}, "x"});
  CHECK(code_of([&] { store.create_session({"demo", {1, 2}, {}, "x"}); }) == ErrorCode::conflict);
  CHECK(store.create_session({"demo", {1, 2}, {}, ""}) != id);
  CHECK(code_of([&] { store.submit_labels(id, "a", {{3, 0}}); }) == ErrorCode::invalid_input);
  CHECK(code_of([&] { store.submit_labels(id, "a", {{1, 3}}); }) == ErrorCode::invalid_label);
  CHECK(code_of([&] { store.submit_labels(id, "", {{1, 0}}); }) == ErrorCode::invalid_input);
  CHECK(code_of([&] { store.submit_labels("missing", "a", {{1, 0}}); }) == ErrorCode::not_found);
  // A rejected batch leaves no partial votes behind.
  CHECK(code_of([&] { store.submit_labels(id, "a", {{1, 0}, {2, 9}}); }) == ErrorCode::invalid_label);
  CHECK(store.get_session(id).votes.empty());

  CHECK(http_status(ErrorCode::not_found) == 404);
  CHECK(http_status(ErrorCode::conflict) == 409);
  CHECK(http_status(ErrorCode::incomplete) == 409);
  CHECK(http_status(ErrorCode::invalid_label) == 400);
  CHECK(http_status(ErrorCode::io) == 500);
  fs::remove_all(root);
}

TEST_CASE("reopening the store replays the logs") {
  const auto root = scratch_dir("replay");
  std::string open_id, done_id;
  std::vector<AnnotationSession> before;
  {
    AnnotationStore store(root);
    store.register_dataset("demo", small_dataset());
    open_id = store.create_session({"demo", {0, 2, 4}, {}, "r1"});
    store.submit_labels(open_id, "a", {{0, 1}, {2, 1}});
    store.submit_labels(open_id, "b", {{0, 2}});
    store.submit_labels(open_id, "a", {{0, 0}});
    done_id = store.create_session({"demo", {6}, {}, "r2"});
    store.submit_labels(done_id, "a", {{6, 2}});
    store.finalize_session(done_id);
    before = {store.get_session(done_id), store.get_session(open_id)};
  }
  // A torn trailing record (crash mid-write) is ignored.
  std::ofstream(root / "sessions" / open_id / "log.jsonl", std::ios::app) << R"({"type":"labels","annot)";

  AnnotationStore reopened(root);
  const auto ids = reopened.session_ids();
  CHECK(ids.size() == 2);
  CHECK(reopened.get_session(done_id) == before[0]);
  CHECK(reopened.get_session(open_id) == before[1]);
  CHECK(reopened.get_session(done_id).expert_set->corrected_labels == Labels{2});

  reopened.register_dataset("demo", small_dataset());
  CHECK(reopened.submit_labels(open_id, "a", {{4, 1}}) == 3);
  fs::remove_all(root);
}

TEST_CASE("HTTP round trip without any UI") {
  const auto root = scratch_dir("http");
  AnnotationStore store(root);
  store.register_dataset("demo", small_dataset());
  httplib::Server server;
  install_routes(server, store);
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread thread([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  httplib::Client client("127.0.0.1", port);
  auto created = client.Post("/sessions", json{{"dataset", "demo"}, {"indices", {2, 3}}, {"nonce", "h"}}.dump(),
                             "application/json");
  REQUIRE(created);
  CHECK(created->status == 201);
  const std::string id = json::parse(created->body)["session_id"];
  CHECK(json::parse(created->body)["pending"] == 2);

  auto dup = client.Post("/sessions", json{{"dataset", "demo"}, {"indices", {2, 3}}, {"nonce", "h"}}.dump(),
                         "application/json");
  REQUIRE(dup);
  CHECK(dup->status == 409);
  CHECK(json::parse(dup->body)["error"] == "conflict");

  auto batch = client.Get("/sessions/" + id + "/batch?annotator=a&size=5");
  REQUIRE(batch);
  CHECK(batch->status == 200);
  CHECK(json::parse(batch->body)["items"].size() == 2);

  auto early = client.Post("/sessions/" + id + "/finalize", "", "application/json");
  REQUIRE(early);
  CHECK(early->status == 409);

  const json labels = {{"annotator", "a"}, {"labels", {{{"index", 2}, {"label", 1}}, {{"index", 3}, {"label", 0}}}}};
  auto ack = client.Post("/sessions/" + id + "/labels", labels.dump(), "application/json");
  REQUIRE(ack);
  CHECK(ack->status == 200);
  CHECK(json::parse(ack->body)["labeled"] == 2);

  auto bad = client.Post("/sessions/" + id + "/labels",
                         json{{"annotator", "a"}, {"labels", {{{"index", 2}, {"label", 7}}}}}.dump(), "application/json");
  REQUIRE(bad);
  CHECK(bad->status == 400);
  auto garbage = client.Post("/sessions/" + id + "/labels", "{not json", "application/json");
  REQUIRE(garbage);
  CHECK(garbage->status == 400);

  auto progress = client.Get("/sessions/" + id + "/progress");
  REQUIRE(progress);
  CHECK(json::parse(progress->body)["pending"] == 0);

  auto final = client.Post("/sessions/" + id + "/finalize", "", "application/json");
  REQUIRE(final);
  CHECK(final->status == 200);
  const auto expert = json::parse(final->body)["expert_set"].get<ExpertSet>();
  CHECK(expert.indices == IndexList{2, 3});
  CHECK(expert.corrected_labels == Labels{1, 0});
  CHECK(json::parse(final->body)["kappa"].is_null());

  auto missing = client.Get("/sessions/nope");
  REQUIRE(missing);
  CHECK(missing->status == 404);

  server.stop();
  thread.join();
  fs::remove_all(root);
}
