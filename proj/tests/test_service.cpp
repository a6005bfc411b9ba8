#include <filesystem>
#include <fstream>
#include <thread>

#include "test_util.hpp"

#include "lmte/service.hpp"

#include <httplib.h>

using namespace lmte;

namespace {

std::filesystem::path data_dir() { return std::filesystem::path(lmte::test::source_dir()) / "data"; }

json session_body(bool with_point) {
  json body{{"train_csv_path", "two_moons.csv"},
            {"schema_path", "two_moons.schema.json"},
            {"oracle_spec",
             {{"kind", "in-process"},
              {"task", "classification"},
              {"model", "reference-forest"},
              {"train_csv", "two_moons.csv"},
              {"schema", "two_moons.schema.json"},
              {"label", "label"},
              {"n_trees", 10},
              {"seed", 3}}},
            {"config", {{"gan", {{"epochs", 80}}}, {"seed", 2}}}};
  if (with_point) body["point"] = {{"x1", 0.5}, {"x2", 0.25}};
  return body;
}

ServiceOptions options() {
  ServiceOptions o;
  o.base_dir = data_dir();
  o.port = 0;
  return o;
}

// An override of the root split feature that lands on the other side.
json crossing_override(const json& tree, const json& point) {
  const auto& root = tree["nodes"][0];
  const std::string name = root["feature_name"];
  const double thr = root["raw_threshold"];
  return json{{name, point[name].get<double>() <= thr ? thr + 1.0 : thr - 1.0}};
}

}  // namespace

TEST_SUITE("service") {

TEST_CASE("status mapping") {
  CHECK(http_status_for("unknown_session") == 404);
  CHECK(http_status_for("no_tree") == 409);
  CHECK(http_status_for("oracle_unavailable") == 502);
  CHECK(http_status_for("method_not_allowed") == 405);
  CHECK(http_status_for("internal") == 500);
  CHECK(http_status_for("unknown_feature") == 400);
}

TEST_CASE("routing without sockets") {
  ExplanationService svc(options());
  auto r = svc.handle("GET", "/health", "");
  CHECK(r.status == 200);
  CHECK(r.body == json{{"status", "ok"}});
  CHECK(svc.handle("POST", "/health", "").status == 405);
  CHECK(svc.handle("GET", "/nowhere", "").status == 404);
  CHECK(svc.handle("POST", "/sessions", "{oops").status == 400);
  CHECK(svc.handle("POST", "/sessions", "{oops").body["error"]["code"] == "invalid_json");
  CHECK(svc.handle("POST", "/sessions", json{{"oracle_spec", json::object()}}.dump()).status == 400);
  CHECK(svc.handle("GET", "/sessions/s99/schema", "").status == 404);
  auto missing = session_body(false);
  missing["train_csv_path"] = "absent.csv";
  CHECK(svc.handle("POST", "/sessions", missing.dump()).status == 404);
  CHECK(svc.handle("GET", "/sessions", "").body == json{{"sessions", json::array()}});
}

TEST_CASE("lazy session: explain per request, no tree") {
  ExplanationService svc(options());
  const auto created = svc.handle("POST", "/sessions", session_body(false).dump());
  REQUIRE(created.status == 201);
  const std::string id = created.body["session_id"];
  CHECK_FALSE(created.body.contains("explanation"));

  std::ifstream sidecar(data_dir() / "two_moons.schema.json");
  const json expected = Schema::from_json(json::parse(sidecar)).to_json();
  const auto schema = svc.handle("GET", "/sessions/" + id + "/schema", "");
  CHECK(schema.status == 200);
  // the label column is split off for the explainer
  REQUIRE(schema.body["columns"].size() == 2);
  CHECK(schema.body["columns"][0] == expected["columns"][0]);
  CHECK(schema.body["columns"][1] == expected["columns"][1]);

  CHECK(svc.handle("GET", "/sessions/" + id + "/tree", "").status == 409);
  CHECK(svc.handle("POST", "/sessions/" + id + "/whatif", "{}").status == 409);
  CHECK(svc.handle("POST", "/sessions/" + id + "/explain", "{}").status == 400);
  const auto e = svc.handle("POST", "/sessions/" + id + "/explain", json{{"point", {{"x1", 0.5}, {"x2", 0.25}}}}.dump());
  CHECK(e.status == 200);
  CHECK(e.body.contains("context"));
  CHECK(e.body["top_attributions"].size() == 2);
}

TEST_CASE("fitted session: tree, explain and what-if") {
  ExplanationService svc(options());
  const auto created = svc.handle("POST", "/sessions", session_body(true).dump());
  REQUIRE(created.status == 201);
  const std::string id = created.body["session_id"];
  const std::string base = "/sessions/" + id;
  REQUIRE(created.body.contains("explanation"));

  const auto tree = svc.handle("GET", base + "/tree", "");
  REQUIRE(tree.status == 200);
  CHECK(tree.body["format"] == "lmte-tree/1");
  REQUIRE(tree.body["nodes"][0].contains("feature_name"));

  const auto cached = svc.handle("POST", base + "/explain", "{}");
  CHECK(cached.status == 200);
  CHECK(cached.body == created.body["explanation"]);
  const auto fresh = svc.handle("POST", base + "/explain", "{}", {{"fresh", "true"}});
  CHECK(fresh.status == 200);
  CHECK(fresh.body["leaf_id"] == cached.body["leaf_id"]);

  const json point = created.body["explanation"]["point"];
  const auto unchanged = svc.handle("POST", base + "/whatif", json{{"overrides", json::object()}}.dump());
  REQUIRE(unchanged.status == 200);
  CHECK(unchanged.body["leaf_changed"] == false);

  const auto crossed = svc.handle("POST", base + "/whatif", json{{"overrides", crossing_override(tree.body, point)}}.dump());
  REQUIRE(crossed.status == 200);
  CHECK(crossed.body["leaf_changed"] == true);
  CHECK(crossed.body["leaf_id"] != crossed.body["base_leaf_id"]);
  CHECK(svc.handle("POST", base + "/whatif", json{{"overrides", crossing_override(tree.body, point)}}.dump()).body ==
        crossed.body);

  const auto bad = svc.handle("POST", base + "/whatif", json{{"overrides", {{"x9", 1.0}}}}.dump());
  CHECK(bad.status == 400);
  CHECK(bad.body["error"]["code"] == "unknown_feature");
  CHECK(svc.handle("POST", base + "/whatif", json{{"top_k", 0}}.dump()).status == 400);
  CHECK(svc.handle("GET", base + "/whatif", "").status == 405);

  CHECK(svc.handle("DELETE", base, "").status == 200);
  CHECK(svc.handle("GET", base + "/tree", "").status == 404);
}

TEST_CASE("live HTTP: concurrent what-if requests return identical bodies") {
  ExplanationService svc(options());
  svc.start();
  REQUIRE(svc.port() > 0);
  httplib::Client client("127.0.0.1", svc.port());
  const auto health = client.Get("/health");
  REQUIRE(health);
  CHECK(health->status == 200);
  CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");

  const auto created = client.Post("/sessions", session_body(true).dump(), "application/json");
  REQUIRE(created);
  REQUIRE(created->status == 201);
  const std::string id = json::parse(created->body)["session_id"];
  const auto tree = json::parse(client.Get("/sessions/" + id + "/tree")->body);
  const json point = json::parse(created->body)["explanation"]["point"];
  const std::string req = json{{"overrides", crossing_override(tree, point)}}.dump();

  std::vector<std::string> bodies(8);
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < bodies.size(); ++t)
    threads.emplace_back([&, t] {
      httplib::Client c("127.0.0.1", svc.port());
      for (int i = 0; i < 5; ++i) {
        const auto res = c.Post("/sessions/" + id + "/whatif", req, "application/json");
        if (res && res->status == 200 && (bodies[t].empty() || bodies[t] == res->body))
          bodies[t] = res->body;
        else
          bodies[t] = "mismatch";
      }
    });
  for (auto& th : threads) th.join();
  for (const auto& b : bodies) CHECK(b == bodies[0]);
  CHECK(json::parse(bodies[0])["leaf_changed"] == true);

  const auto nf = client.Get("/sessions/nope/tree");
  REQUIRE(nf);
  CHECK(nf->status == 404);
  CHECK(json::parse(nf->body)["error"]["code"] == "unknown_session");
  svc.stop();
}

TEST_CASE("snapshots restore sessions across restarts") {
  const auto dir = std::filesystem::temp_directory_path() / "lmte_service_snapshots";
  std::filesystem::remove_all(dir);
  auto opts = options();
  opts.snapshot_dir = dir;
  std::string id, tree_before;
  {
    ExplanationService svc(opts);
    const auto created = svc.handle("POST", "/sessions", session_body(true).dump());
    REQUIRE(created.status == 201);
    id = created.body["session_id"];
    tree_before = svc.handle("GET", "/sessions/" + id + "/tree", "").body.dump();
  }
  CHECK(std::filesystem::exists(dir / (id + ".json")));
  std::ofstream(dir / "zz_broken.json") << "{";
  ExplanationService restored(opts);
  CHECK(restored.session_count() == 1);
  CHECK(restored.handle("GET", "/sessions/" + id + "/tree", "").body.dump() == tree_before);
  const auto next = restored.handle("POST", "/sessions", session_body(false).dump());
  CHECK(next.body["session_id"] != id);
  std::filesystem::remove_all(dir);
}

}  // TEST_SUITE
