// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <string>

#include "ifam/databench.hpp"
#include "ifam/model.hpp"

namespace ifam {

struct ServiceOptions {
  std::string plans_dir;   // named-plan store; empty keeps plans in memory
  std::string static_dir;  // console bundle mounted at /, if set
};

/// JSON-over-HTTP facade over one frozen model and its dataset.
///
///   GET  /api/model
///   GET  /api/samples?split=&page=&page_size=
///   GET  /api/sample/{id}/image             PNG
///   GET  /api/sample/{id}/parts?plan=       indexed PNG, palette index = part
///   GET  /api/sample/{id}/predict?plan=
///   POST /api/plan/loo        {split, metric, base?, repeated?, async?}
///   POST /api/plan/calibrate  {q, async?}
///   POST /api/evaluate        {split, plan?, async?}
///   GET  /api/job             status and result of the last job
///   GET  /api/plans, GET|PUT|DELETE /api/plans/{name}
///
/// `plan=` takes a plan JSON document or the name of a stored plan. Errors:
/// 400 malformed request, 404 unknown sample, split or plan name, 422 plan
/// invalid for the model, 409 while another job runs. Jobs are the three POST
/// endpoints; with "async": true they return 202 and run in the background.
class Service {
 public:
  Service(IfamModel model, GroupedDataset data, ServiceOptions options = {});
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Blocks until stop().
  bool listen(const std::string& host, int port);
  /// Binds an ephemeral port and returns it; serve with listen_after_bind().
  int bind_any_port(const std::string& host);
  bool listen_after_bind();
  void wait_until_ready() const;
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace ifam
