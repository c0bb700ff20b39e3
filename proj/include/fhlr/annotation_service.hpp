#pragma once

#include <json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>

#include "fhlr/datasets.hpp"
#include "fhlr/training.hpp"

namespace httplib {
class Server;
}

namespace fhlr {

enum class SessionStatus { open, finalized };

struct SessionRequest {
  std::string dataset;
  IndexList indices;
  std::vector<std::string> class_names;  // defaults to "class <k>"
  std::string nonce;                     // random when empty
};

struct LabelSubmission {
  std::size_t index = 0;
  int label = 0;
};

struct AnnotationSession {
  std::string id;
  std::string dataset;
  std::string nonce;
  IndexList indices;
  std::vector<std::string> class_names;
  /// votes[index][annotator] = latest label from that annotator.
  std::map<std::size_t, std::map<std::string, int>> votes;
  SessionStatus status = SessionStatus::open;
  std::string created_at;
  std::string finalized_at;
  std::optional<ExpertSet> expert_set;
  std::optional<double> kappa;

  int num_classes() const { return static_cast<int>(class_names.size()); }
  std::size_t labeled_count() const;
  bool operator==(const AnnotationSession&) const = default;
};

struct FinalizeResult {
  ExpertSet expert_set;
  std::optional<double> kappa;  // reported when at least two annotators voted on every item
};

/// Sessions persisted as one append-only JSON-lines log each under root/sessions/<id>/.
/// Every mutation is flushed and synced before it is acknowledged; reopening the store
/// replays the logs. Mutations of one session are serialized by that session's mutex.
class AnnotationStore {
 public:
  explicit AnnotationStore(std::filesystem::path root);

  void register_dataset(const std::string& name, std::shared_ptr<const WindowedDataset> ds);
  bool has_dataset(const std::string& name) const;

  std::string create_session(const SessionRequest& request);
  AnnotationSession get_session(const std::string& id) const;
  std::vector<std::string> session_ids() const;

  /// Up to `size` window payloads this annotator has not labeled; items nobody labeled come first.
  nlohmann::json next_batch(const std::string& id, const std::string& annotator, std::size_t size) const;
  /// Appends the votes to the log, then applies them. Returns the number of items now labeled.
  std::size_t submit_labels(const std::string& id, const std::string& annotator,
                            const std::vector<LabelSubmission>& labels);
  FinalizeResult finalize_session(const std::string& id);
  nlohmann::json progress(const std::string& id) const;

  const std::filesystem::path& root() const { return root_; }

 private:
  struct Entry {
    mutable std::mutex mutex;
    AnnotationSession session;
    std::filesystem::path log_path;
  };

  std::shared_ptr<Entry> find(const std::string& id) const;
  void append(const Entry& entry, const nlohmann::json& record) const;
  void replay();

  std::filesystem::path root_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, std::shared_ptr<Entry>> sessions_;
  std::map<std::string, std::shared_ptr<const WindowedDataset>> datasets_;
};

/// Window payload: {"index", "channels", "channel_names", "sample_rate_hz", "class_names"}.
nlohmann::json window_payload(const WindowedDataset& ds, std::size_t index, const std::vector<std::string>& class_names);

/// HTTP status for an error code (400, 404, 409 or 500).
int http_status(ErrorCode code);

/// Installs the JSON routes on `server`; the store must outlive it.
void install_routes(httplib::Server& server, AnnotationStore& store);

std::string_view to_string(SessionStatus s);
void to_json(nlohmann::json& j, const AnnotationSession& s);

}  // namespace fhlr
