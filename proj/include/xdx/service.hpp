#pragma once

// HTTP inference service over a shared, immutable cascade backend.
//
//   GET  /v1/health              {"status":"ok"}
//   GET  /v1/models              per-stage preset, head, classes and weight checksum
//   POST /v1/predict[?explain=]  raw PNG, PGM or PPM body -> cascade report JSON
//
// Every 4xx/5xx body is {"error": "..."}.

#include <memory>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

#include "xdx/cascade.hpp"
#include "xdx/config.hpp"

namespace xdx {

/// Reads XDX_LOG (debug|info|warn|error); unset leaves the default (info).
void configure_logging();

struct HttpReply {
    int status = 200;
    std::string body;
};

HttpReply error_reply(int status, const std::string& message);

class InferenceService {
public:
    InferenceService(std::shared_ptr<const CascadeBackend> backend, ServeConfig config, nlohmann::json models_info);
    ~InferenceService();
    InferenceService(const InferenceService&) = delete;
    InferenceService& operator=(const InferenceService&) = delete;

    HttpReply health() const;
    HttpReply models() const;
    HttpReply predict(std::string_view body, std::string_view content_type,
                      const std::optional<std::string>& explain) const;

    /// Binds `config.host`; port 0 picks a free port. Returns the bound port.
    int bind();
    /// Blocks serving requests until stop().
    void run();
    void stop();

private:
    struct Server;
    std::shared_ptr<const CascadeBackend> backend_;
    ServeConfig config_;
    nlohmann::json models_;
    std::unique_ptr<Server> server_;
};

/// Loads the three stage models (heads forced by stage) and registers the
/// stage-3 model as the chest abnormality model.
std::shared_ptr<NetworkBackend> load_backend(const ServeConfig& config);
nlohmann::json models_metadata(const ServeConfig& config, const NetworkBackend& backend);

}  // namespace xdx
