#include "xdx/service.hpp"

#include <cstdlib>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "xdx/image.hpp"

namespace xdx {

void configure_logging() {
    const char* level = std::getenv("XDX_LOG");
    if (!level || !*level) return;
    const auto parsed = spdlog::level::from_str(level);
    if (parsed == spdlog::level::off && std::string_view(level) != "off") {
        spdlog::warn("XDX_LOG={} is not a log level; keeping {}", level,
                     spdlog::level::to_string_view(spdlog::get_level()));
        return;
    }
    spdlog::set_level(parsed);
}

HttpReply error_reply(int status, const std::string& message) {
    return {status, nlohmann::json{{"error", message}}.dump()};
}

struct InferenceService::Server {
    httplib::Server http;
};

InferenceService::InferenceService(std::shared_ptr<const CascadeBackend> backend, ServeConfig config,
                                   nlohmann::json models_info)
    : backend_(std::move(backend)), config_(std::move(config)), models_(std::move(models_info)),
      server_(std::make_unique<Server>()) {
    if (!backend_) throw std::invalid_argument("service needs a backend");
    config_.cascade.validate();

    auto send = [](httplib::Response& res, const HttpReply& reply) {
        res.status = reply.status;
        res.set_content(reply.body, "application/json");
    };
    auto& http = server_->http;
    http.set_payload_max_length(config_.max_body_bytes);
    http.Get("/v1/health", [this, send](const httplib::Request&, httplib::Response& res) { send(res, health()); });
    http.Get("/v1/models", [this, send](const httplib::Request&, httplib::Response& res) { send(res, models()); });
    http.Post("/v1/predict", [this, send](const httplib::Request& req, httplib::Response& res) {
        std::optional<std::string> explain;
        if (req.has_param("explain")) explain = req.get_param_value("explain");
        send(res, predict(req.body, req.get_header_value("Content-Type"), explain));
    });
    http.set_error_handler([](const httplib::Request&, httplib::Response& res) {
        if (!res.body.empty() && res.get_header_value("Content-Type") == "application/json")
            return httplib::Server::HandlerResponse::Unhandled;
        std::string message = httplib::status_message(res.status);
        if (res.status == 413) message = "request body exceeds the size limit";
        res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
        return httplib::Server::HandlerResponse::Handled;
    });
    http.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string message = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            message = e.what();
        } catch (...) {
        }
        spdlog::error("unhandled exception: {}", message);
        res.status = 500;
        res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
    });
    http.set_logger([](const httplib::Request& req, const httplib::Response& res) {
        spdlog::debug("{} {} -> {} ({} bytes)", req.method, req.path, res.status, res.body.size());
    });
}

InferenceService::~InferenceService() { stop(); }

HttpReply InferenceService::health() const { return {200, R"({"status":"ok"})"}; }

HttpReply InferenceService::models() const { return {200, models_.dump()}; }

HttpReply InferenceService::predict(std::string_view body, std::string_view content_type,
                                    const std::optional<std::string>& explain) const {
    if (body.size() > config_.max_body_bytes) return error_reply(413, "request body exceeds the size limit");
    const std::string_view media = content_type.substr(0, content_type.find(';'));
    if (!media.empty() && media != "image/png" && media != "image/x-portable-graymap" && media != "image/x-portable-pixmap" &&
        media != "image/x-portable-anymap" && media != "application/octet-stream")
        return error_reply(415, "unsupported content type " + std::string(media));
    if (body.empty()) return error_reply(400, "empty request body");

    CascadeConfig cascade = config_.cascade;
    if (explain) {
        try {
            parse_explain(*explain, cascade);
        } catch (const std::invalid_argument& e) {
            return error_reply(400, e.what());
        }
    }
    Image image;
    try {
        image = decode_image(std::span(reinterpret_cast<const std::uint8_t*>(body.data()), body.size()));
    } catch (const ImageError& e) {
        return error_reply(400, std::string("cannot decode image: ") + e.what());
    }
    try {
        return {200, report_to_json(run_cascade(image, *backend_, cascade)).dump()};
    } catch (const ImageError& e) {
        return error_reply(400, e.what());
    } catch (const std::exception& e) {
        spdlog::error("predict failed: {}", e.what());
        return error_reply(500, e.what());
    }
}

int InferenceService::bind() {
    const int port = config_.port == 0 ? server_->http.bind_to_any_port(config_.host)
                                       : (server_->http.bind_to_port(config_.host, config_.port) ? config_.port : -1);
    if (port < 0)
        throw std::runtime_error("cannot bind " + config_.host + ":" + std::to_string(config_.port));
    return port;
}

void InferenceService::run() {
    if (!server_->http.listen_after_bind()) throw std::runtime_error("service stopped with a socket error");
}

void InferenceService::stop() {
    if (server_) server_->http.stop();
}

std::shared_ptr<NetworkBackend> load_backend(const ServeConfig& config) {
    for (const auto* p : {&config.stage1_weights, &config.stage2_weights, &config.stage3_weights})
        if (p->empty()) throw ConfigError("serve config needs stage1_weights, stage2_weights and stage3_weights");
    auto backend = std::make_shared<NetworkBackend>(load_network(config.stage1_weights, head_for_stage(1), config.input_size),
                                                    load_network(config.stage2_weights, head_for_stage(2), config.input_size));
    backend->register_abnormality_model(XrayType::Chest,
                                        load_network(config.stage3_weights, head_for_stage(3), config.input_size));
    return backend;
}

nlohmann::json models_metadata(const ServeConfig& config, const NetworkBackend& backend) {
    auto describe = [](int stage, const Network& net, const std::string& path, nlohmann::json classes) {
        return nlohmann::json{{"stage", stage},
                              {"preset", net.spec().preset_name()},
                              {"head", to_string(net.spec().head)},
                              {"input_size", net.spec().input_size},
                              {"classes", std::move(classes)},
                              {"weights_checksum", weight_checksum(path)}};
    };
    return {{"models",
             {describe(1, backend.stage1(), config.stage1_weights, {"other", "xray"}),
              describe(2, backend.stage2(), config.stage2_weights, xray_type_names()),
              describe(3, backend.abnormality_model(XrayType::Chest), config.stage3_weights, condition_names())}}};
}

}  // namespace xdx
