// SPDX-License-Identifier: Apache-2.0
#include "ifam/service.hpp"

#include <httplib.h>
#include <spdlog/spdlog.h>

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <regex>
#include <thread>
#include <utility>

#include "ifam/interventions.hpp"
#include "ifam/json_io.hpp"
#include "ifam/png_io.hpp"

namespace ifam {

namespace fs = std::filesystem;

namespace {

struct HttpError : std::runtime_error {
  int status;
  HttpError(int s, const std::string& msg) : std::runtime_error(msg), status(s) {}
};

void send_json(httplib::Response& res, const Json& j, int status = 200) {
  res.status = status;
  res.set_content(j.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& msg) {
  send_json(res, Json{{"error", msg}, {"status", status}}, status);
}

Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    Json j = Json::parse(req.body);
    if (!j.is_object()) throw HttpError(400, "request body must be a JSON object");
    return j;
  } catch (const Json::parse_error& e) {
    throw HttpError(400, std::string("malformed JSON body: ") + e.what());
  }
}

template <typename T>
T body_field(const Json& body, const char* key, T fallback) {
  auto it = body.find(key);
  if (it == body.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const Json::exception&) {
    throw HttpError(400, std::string("field '") + key + "' has the wrong type");
  }
}

void reject_unknown(const Json& body, std::initializer_list<const char*> known) {
  for (auto it = body.begin(); it != body.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok = ok || it.key() == k;
    if (!ok) throw HttpError(400, "unknown field '" + it.key() + "'");
  }
}

bool valid_plan_name(const std::string& name) {
  static const std::regex re("[A-Za-z0-9_.-]{1,64}");
  return std::regex_match(name, re) && name != "." && name != "..";
}

}  // namespace

struct Service::Impl {
  IfamModel model;
  GroupedDataset data;
  ServiceOptions options;
  httplib::Server server;
  std::map<std::string, std::pair<std::string, std::size_t>> sample_index;  // id -> split, row

  std::mutex plans_mutex;
  std::map<std::string, InterventionPlan> plans;

  std::atomic<bool> busy{false};
  std::mutex job_mutex;
  Json job{{"id", 0}, {"state", "idle"}};
  std::thread worker;

  Impl(IfamModel m, GroupedDataset d, ServiceOptions o)
      : model(std::move(m)), data(std::move(d)), options(std::move(o)) {
    for (const auto& [name, split] : data.splits)
      for (std::size_t i = 0; i < split.samples.size(); ++i)
        sample_index[split.samples[i].id] = {name, i};
    load_plans();
    routes();
  }

  ~Impl() {
    server.stop();
    if (worker.joinable()) worker.join();
  }

  void load_plans() {
    if (options.plans_dir.empty()) return;
    fs::create_directories(options.plans_dir);
    for (const auto& entry : fs::directory_iterator(options.plans_dir)) {
      if (entry.path().extension() != ".json") continue;
      try {
        plans[entry.path().stem().string()] =
            read_json_file(entry.path().string()).get<InterventionPlan>();
      } catch (const std::exception& e) {
        spdlog::warn("skipping plan {}: {}", entry.path().string(), e.what());
      }
    }
  }

  const GroupedSample& sample(const std::string& id) const {
    auto it = sample_index.find(id);
    if (it == sample_index.end()) throw HttpError(404, "unknown sample '" + id + "'");
    return data.splits.at(it->second.first).samples[it->second.second];
  }

  const Split& split(const std::string& name) const {
    auto it = data.splits.find(name);
    if (it == data.splits.end()) throw HttpError(404, "unknown split '" + name + "'");
    return it->second;
  }

  InterventionPlan checked_plan(const Json& j) const {
    InterventionPlan plan;
    try {
      plan = j.get<InterventionPlan>();
    } catch (const ConfigError& e) {
      throw HttpError(422, e.what());
    }
    if (!model.has_selector() && !plan.empty()) {
      throw HttpError(422, "dense model has no parts to intervene on");
    }
    if (model.has_selector()) {
      try {
        plan.validate(model.config.n_parts);
      } catch (const std::invalid_argument& e) {
        throw HttpError(422, e.what());
      }
    }
    return plan;
  }

  // A query value is either an inline plan document or a stored plan name.
  InterventionPlan plan_from_query(const httplib::Request& req) {
    if (!req.has_param("plan")) return {};
    const std::string v = req.get_param_value("plan");
    if (v.empty()) return {};
    if (v.front() == '{') {
      try {
        return checked_plan(Json::parse(v));
      } catch (const Json::parse_error& e) {
        throw HttpError(400, std::string("malformed plan: ") + e.what());
      }
    }
    std::lock_guard lock(plans_mutex);
    auto it = plans.find(v);
    if (it == plans.end()) throw HttpError(404, "unknown plan '" + v + "'");
    return checked_plan(Json(it->second));
  }

  InterventionPlan plan_from_body(const Json& body, const char* key) const {
    auto it = body.find(key);
    if (it == body.end() || it->is_null()) return {};
    return checked_plan(*it);
  }

  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  static Handler guarded(Handler fn) {
    return [fn = std::move(fn)](const httplib::Request& req, httplib::Response& res) {
      try {
        fn(req, res);
      } catch (const HttpError& e) {
        send_error(res, e.status, e.what());
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    };
  }

  // Runs one job at a time; concurrent requests get 409.
  void run_job(const std::string& kind, std::function<Json()> work, bool async,
               httplib::Response& res) {
    bool expected = false;
    if (!busy.compare_exchange_strong(expected, true)) {
      throw HttpError(409, "another job is already running");
    }
    int id = 0;
    {
      std::lock_guard lock(job_mutex);
      id = job["id"].get<int>() + 1;
      job = Json{{"id", id}, {"kind", kind}, {"state", "running"}};
    }
    auto finish = [this, id, kind](Json result, int status, const std::string& error) {
      std::lock_guard lock(job_mutex);
      job = Json{{"id", id}, {"kind", kind}};
      if (error.empty()) {
        job["state"] = "done";
        job["result"] = std::move(result);
      } else {
        job["state"] = "failed";
        job["error"] = error;
        job["status"] = status;
      }
      busy = false;
    };
    auto execute = [work = std::move(work), finish]() -> std::pair<int, Json> {
      try {
        Json r = work();
        finish(r, 200, "");
        return {200, std::move(r)};
      } catch (const HttpError& e) {
        finish({}, e.status, e.what());
        return {e.status, Json{{"error", e.what()}, {"status", e.status}}};
      } catch (const std::exception& e) {
        finish({}, 500, e.what());
        return {500, Json{{"error", e.what()}, {"status", 500}}};
      }
    };
    if (async) {
      if (worker.joinable()) worker.join();
      worker = std::thread([execute] { execute(); });
      send_json(res, Json{{"job", id}, {"state", "running"}}, 202);
      return;
    }
    auto [status, body] = execute();
    send_json(res, body, status);
  }

  Json model_info() const {
    Json names = Json::array();
    for (int c = 0; c < model.config.n_classes; ++c) names.push_back(class_name(c));
    Json palette = Json::array();
    for (const auto& rgb : png::part_palette(model.has_selector() ? model.config.n_parts : 0))
      palette.push_back(Json::array({rgb[0], rgb[1], rgb[2]}));
    Json splits = Json::object();
    for (const auto& [name, s] : data.splits) splits[name] = s.samples.size();
    return Json{{"config", model.config},
                {"path", to_string(model.path)},
                {"n_parts", model.has_selector() ? model.config.n_parts : 0},
                {"class_names", names},
                {"palette", palette},
                {"splits", splits}};
  }

  void routes() {
    server.Get("/api/model", guarded([this](const httplib::Request&, httplib::Response& res) {
      send_json(res, model_info());
    }));

    server.Get("/api/samples", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const std::string name = req.has_param("split") ? req.get_param_value("split") : "val";
      const Split& s = split(name);
      int page = 0, page_size = 50;
      try {
        if (req.has_param("page")) page = std::stoi(req.get_param_value("page"));
        if (req.has_param("page_size")) page_size = std::stoi(req.get_param_value("page_size"));
      } catch (const std::exception&) {
        throw HttpError(400, "page and page_size must be integers");
      }
      if (page < 0 || page_size < 1 || page_size > 1000) throw HttpError(400, "bad page range");
      Json rows = Json::array();
      const std::size_t begin = static_cast<std::size_t>(page) * page_size;
      for (std::size_t i = begin; i < std::min(s.samples.size(), begin + page_size); ++i) {
        const GroupedSample& x = s.samples[i];
        rows.push_back(Json{{"id", x.id},
                            {"class", x.label},
                            {"class_name", class_name(x.label)},
                            {"background", x.background},
                            {"group", x.group}});
      }
      send_json(res, Json{{"split", name},
                          {"page", page},
                          {"page_size", page_size},
                          {"total", s.samples.size()},
                          {"samples", rows}});
    }));

    server.Get("/api/sample/:id/image",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const auto png = png::encode_rgb(sample(req.path_params.at("id")).image);
                 res.set_content(std::string(png.begin(), png.end()), "image/png");
               }));

    server.Get("/api/sample/:id/parts",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const GroupedSample& s = sample(req.path_params.at("id"));
                 if (!model.has_selector()) throw HttpError(404, "dense model has no part maps");
                 const Prediction p = run_pipeline(model, s.image, plan_from_query(req));
                 const int size = model.config.image_size, g = model.config.grid();
                 const int ps = model.config.patch_size;
                 std::vector<std::uint8_t> idx(static_cast<std::size_t>(size) * size);
                 for (int y = 0; y < size; ++y)
                   for (int x = 0; x < size; ++x)
                     idx[y * size + x] =
                         static_cast<std::uint8_t>(p.assignment->hard[(y / ps) * g + x / ps]);
                 const auto png = png::encode_indexed(idx, size, size,
                                                      png::part_palette(model.config.n_parts));
                 res.set_content(std::string(png.begin(), png.end()), "image/png");
               }));

    server.Get("/api/sample/:id/predict",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 const GroupedSample& s = sample(req.path_params.at("id"));
                 const InterventionPlan plan = plan_from_query(req);
                 const Prediction p = run_pipeline(model, s.image, plan);
                 Json out{{"id", s.id},
                          {"label", s.label},
                          {"logits", std::vector<double>(p.logits.values().begin(),
                                                         p.logits.values().end())},
                          {"predicted", p.predicted},
                          {"class_name", class_name(p.predicted)},
                          {"removed_tokens", p.removed_tokens},
                          {"plan", plan}};
                 if (p.assignment) out["assignment"] = p.assignment->hard;
                 if (p.mask) out["live"] = p.mask->s;
                 send_json(res, out);
               }));

    server.Post("/api/plan/loo", guarded([this](const httplib::Request& req,
                                                 httplib::Response& res) {
      const Json body = parse_body(req);
      reject_unknown(body, {"split", "metric", "base", "repeated", "async"});
      if (!model.has_selector()) throw HttpError(422, "dense model has no parts");
      const std::string name = body_field<std::string>(body, "split", "val");
      split(name);
      MetricKind kind;
      try {
        kind = metric_from_string(body_field<std::string>(body, "metric", "wga"));
      } catch (const std::invalid_argument& e) {
        throw HttpError(400, e.what());
      }
      const InterventionPlan base = plan_from_body(body, "base");
      const bool repeated = body_field<bool>(body, "repeated", false);
      run_job("loo", [this, name, kind, base, repeated] {
        LooResult r = loo_part_removal(model, data.split(name), kind, base, repeated);
        Json j = loo_to_json(r, kind);
        j["split"] = name;
        return j;
      }, body_field<bool>(body, "async", false), res);
    }));

    server.Post("/api/plan/calibrate", guarded([this](const httplib::Request& req,
                                                       httplib::Response& res) {
      const Json body = parse_body(req);
      reject_unknown(body, {"q", "async"});
      if (!model.has_selector()) throw HttpError(422, "dense model has no parts");
      const double q = body_field<double>(body, "q", 100.0);
      if (!(q > 0 && q <= 100)) throw HttpError(422, "q must be in (0, 100]");
      run_job("calibrate", [this, q] {
        return Json(calibrate_thresholds(model, data.split("train"), q));
      }, body_field<bool>(body, "async", false), res);
    }));

    server.Post("/api/evaluate", guarded([this](const httplib::Request& req,
                                                 httplib::Response& res) {
      const Json body = parse_body(req);
      reject_unknown(body, {"split", "plan", "async"});
      const std::string name = body_field<std::string>(body, "split", "test-mixed-rand");
      split(name);
      const InterventionPlan plan = plan_from_body(body, "plan");
      run_job("evaluate", [this, name, plan] {
        return Json(evaluate_split(model, data, name, plan));
      }, body_field<bool>(body, "async", false), res);
    }));

    server.Get("/api/job", guarded([this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(job_mutex);
      send_json(res, job);
    }));

    server.Get("/api/plans", guarded([this](const httplib::Request&, httplib::Response& res) {
      std::lock_guard lock(plans_mutex);
      Json names = Json::array();
      for (const auto& [name, p] : plans) names.push_back(name);
      send_json(res, Json{{"plans", names}});
    }));

    server.Get("/api/plans/:name", guarded([this](const httplib::Request& req,
                                                   httplib::Response& res) {
      std::lock_guard lock(plans_mutex);
      auto it = plans.find(req.path_params.at("name"));
      if (it == plans.end()) throw HttpError(404, "unknown plan");
      send_json(res, Json(it->second));
    }));

    server.Put("/api/plans/:name", guarded([this](const httplib::Request& req,
                                                   httplib::Response& res) {
      const std::string name = req.path_params.at("name");
      if (!valid_plan_name(name)) throw HttpError(400, "plan names use [A-Za-z0-9_.-]");
      const InterventionPlan plan = checked_plan(parse_body(req));
      std::lock_guard lock(plans_mutex);
      if (!options.plans_dir.empty()) {
        write_json_file((fs::path(options.plans_dir) / (name + ".json")).string(), Json(plan));
      }
      plans[name] = plan;
      send_json(res, Json{{"name", name}, {"plan", plan}});
    }));

    server.Delete("/api/plans/:name", guarded([this](const httplib::Request& req,
                                                      httplib::Response& res) {
      const std::string name = req.path_params.at("name");
      std::lock_guard lock(plans_mutex);
      if (!plans.erase(name)) throw HttpError(404, "unknown plan");
      if (!options.plans_dir.empty() && valid_plan_name(name)) {
        fs::remove(fs::path(options.plans_dir) / (name + ".json"));
      }
      send_json(res, Json{{"deleted", name}});
    }));

    if (!options.static_dir.empty() && !server.set_mount_point("/", options.static_dir)) {
      throw std::runtime_error("static directory not found: " + options.static_dir);
    }
  }
};

Service::Service(IfamModel model, GroupedDataset data, ServiceOptions options)
    : impl_(std::make_unique<Impl>(std::move(model), std::move(data), std::move(options))) {}

Service::~Service() = default;

bool Service::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

int Service::bind_any_port(const std::string& host) { return impl_->server.bind_to_any_port(host); }

bool Service::listen_after_bind() { return impl_->server.listen_after_bind(); }

void Service::wait_until_ready() const { impl_->server.wait_until_ready(); }

void Service::stop() { impl_->server.stop(); }

}  // namespace ifam
