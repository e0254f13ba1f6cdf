#include <doctest.h>

#include <sys/stat.h>

#include <json.hpp>
#include <set>

#include "fixtures.hpp"
#include "slimpart/emit.hpp"
#include "slimpart/error.hpp"
#include "slimpart/pipeline.hpp"

using namespace slimpart;
using rsrc::Resource;

namespace {

attribution::ExeProfile profile(std::string exe, std::vector<Resource> reads, std::vector<Resource> writes = {}) {
  attribution::ExeProfile p;
  p.exe = std::move(exe);
  p.reads.insert(reads.begin(), reads.end());
  p.writes.insert(writes.begin(), writes.end());
  return p;
}

partition::PartitionMap assign(std::map<std::string, int> a) {
  partition::PartitionMap pm;
  pm.assign = std::move(a);
  return pm;
}

emit::EmitOptions binaries() {
  emit::EmitOptions o;
  o.stub_binary = SLIMPART_STUB;
  o.server_binary = SLIMPART_SERVER;
  return o;
}

std::set<std::string> walked_paths(const std::string& root, bool skip_support = true) {
  std::set<std::string> out;
  for (const auto& e : emit::walk_tree(root)) {
    if (skip_support && e.path.rfind(emit::kSupportDir, 0) == 0) continue;
    out.insert(e.path);
  }
  return out;
}

struct Mediawiki {
  fixtures::TempDir dir{"mw"};
  std::string source = dir / "src";
  placement::PlacementPlan plan;

  Mediawiki() {
    fixtures::build_tree(source, fixtures::slurp(fixtures::fixture("mediawiki/tree.txt")));
    pipeline::AnalyzeOptions o;
    o.traces = {fixtures::fixture("mediawiki/trace.strace")};
    auto a = pipeline::analyze(o).analysis;
    placement::DirectorySource src(source);
    plan = pipeline::plan(a, partition::load_policy_file(fixtures::fixture("mediawiki/policy.txt")), src).plan;
  }
};

}  // namespace

TEST_SUITE("emit") {
  TEST_CASE("metadata is replicated") {
    fixtures::TempDir dir;
    fixtures::build_tree(dir / "src", "d 0755 /bin\nf 0755 50 /bin/app\nd 0755 /etc\nf 0600 9 /etc/app.conf\n");
    placement::DirectorySource src(dir / "src");
    std::map<std::string, attribution::ExeProfile> profiles{
        {"/bin/app", profile("/bin/app", {Resource::file("/bin/app"), Resource::file("/etc/app.conf")})}};
    auto plan = placement::plan_placement(assign({{"/bin/app", 0}}), profiles, {}, src);
    auto r = emit::materialize(plan, dir / "src", dir / "out", binaries());
    struct stat st {};
    REQUIRE(::lstat((dir / "out/containers/c0/rootfs/etc/app.conf").c_str(), &st) == 0);
    CHECK((st.st_mode & 07777) == 0600);
    CHECK(st.st_mtim.tv_sec == 1600000004);
    CHECK(st.st_size == 9);
    REQUIRE(r.manifests.size() == 1);
    CHECK(r.manifests[0].name == "c0");
  }

  TEST_CASE("stubs are installed at blocked-edge sites") {
    Mediawiki mw;
    auto out = mw.dir / "out";
    auto r = emit::materialize(mw.plan, mw.source, out, binaries());
    struct stat st {};
    REQUIRE(::stat((out + "/containers/web/rootfs/usr/bin/convert").c_str(), &st) == 0);
    CHECK(st.st_size == static_cast<off_t>(fixtures::slurp(SLIMPART_STUB).size()));
    CHECK((st.st_mode & 0111) != 0);
    CHECK(fixtures::slurp(out + "/containers/convert/rootfs/usr/bin/convert").size() == 14336);
    auto table = fixtures::slurp(out + "/containers/web/rootfs" + std::string(emit::kStubTable));
    CHECK(table.find("/usr/bin/convert") != std::string::npos);
    for (const auto& m : r.manifests) {
      std::set<std::string> files;
      for (const auto& f : m.files) CHECK(files.insert(f.path).second);
      for (const auto& s : m.stubs) {
        int stub_entries = 0;
        for (const auto& f : m.files) stub_entries += f.path == s.path;
        CHECK(stub_entries == 1);
      }
    }
  }

  TEST_CASE("walking a tree reproduces its manifest") {
    Mediawiki mw;
    auto out = mw.dir / "out";
    auto r = emit::materialize(mw.plan, mw.source, out, binaries());
    for (const auto& m : r.manifests) {
      auto walked = emit::walk_tree(out + "/containers/" + m.name + "/rootfs");
      REQUIRE(walked.size() == m.files.size());
      for (std::size_t i = 0; i < walked.size(); ++i) {
        CHECK(walked[i].path == m.files[i].path);
        CHECK(walked[i].meta.type == m.files[i].meta.type);
        CHECK(walked[i].meta.mode == m.files[i].meta.mode);
        CHECK(walked[i].meta.mtime_sec == m.files[i].meta.mtime_sec);
        if (walked[i].meta.type == placement::FileType::Regular) CHECK(walked[i].meta.size == m.files[i].meta.size);
      }
      auto reread = emit::parse_manifest(fixtures::slurp(out + "/containers/" + m.name + "/manifest.json"));
      CHECK(reread == m);
    }
  }

  TEST_CASE("re-running gives identical trees") {
    Mediawiki mw;
    auto opts = binaries();
    auto a = emit::materialize(mw.plan, mw.source, mw.dir / "a", opts);
    auto b = emit::materialize(mw.plan, mw.source, mw.dir / "b", opts);
    opts.force = true;
    auto c = emit::materialize(mw.plan, mw.source, mw.dir / "a", opts);
    CHECK(a.manifests == b.manifests);
    CHECK(a.manifests == c.manifests);
    for (const auto& m : a.manifests) {
      auto ta = emit::walk_tree(mw.dir / ("a/containers/" + m.name + "/rootfs"));
      auto tb = emit::walk_tree(mw.dir / ("b/containers/" + m.name + "/rootfs"));
      CHECK(ta == tb);
      for (const auto& e : ta) {
        if (e.meta.type != placement::FileType::Regular) continue;
        CHECK(fixtures::slurp(mw.dir / ("a/containers/" + m.name + "/rootfs" + e.path)) ==
              fixtures::slurp(mw.dir / ("b/containers/" + m.name + "/rootfs" + e.path)));
      }
    }
  }

  TEST_CASE("a non-empty output directory needs force") {
    Mediawiki mw;
    fixtures::spit(mw.dir / "out/keep.txt", "x");
    CHECK_THROWS_AS(emit::materialize(mw.plan, mw.source, mw.dir / "out", binaries()), Error);
    auto opts = binaries();
    opts.force = true;
    emit::materialize(mw.plan, mw.source, mw.dir / "out", opts);
    CHECK(fixtures::slurp(mw.dir / "out/keep.txt") == "x");
  }

  TEST_CASE("1000-file tree, 300 touched: output is exactly the closure") {
    fixtures::TempDir dir;
    std::string listing;
    std::set<std::string> dirs;
    std::vector<std::string> all;
    for (int i = 0; i < 1000; ++i) {
      std::string d = "/data/d" + std::to_string(i % 37) + "/s" + std::to_string(i % 5);
      std::string p = d + "/f" + std::to_string(i);
      for (std::string a = d; a != "/data" && dirs.insert(a).second;) a = a.substr(0, a.rfind('/'));
      all.push_back(p);
    }
    listing += "d 0755 /data\n";
    for (const auto& d : dirs) listing += "d 0755 " + d + "\n";
    for (std::size_t i = 0; i < all.size(); ++i) listing += "f 0644 " + std::to_string(i % 97) + " " + all[i] + "\n";
    listing += "f 0755 10 /app\n";
    fixtures::build_tree(dir / "src", listing);

    std::vector<Resource> reads{Resource::file("/app")};
    std::set<std::string> expected{"/app"};
    for (std::size_t i = 0; i < all.size(); i += 3) {
      if (reads.size() > 300) break;
      reads.push_back(Resource::file(all[i]));
      // Independent closure: every proper prefix ending at a '/'.
      for (std::size_t k = 1; k <= all[i].size(); ++k) {
        if (k == all[i].size() || all[i][k] == '/') expected.insert(all[i].substr(0, k));
      }
    }
    REQUIRE(reads.size() == 301);
    std::map<std::string, attribution::ExeProfile> profiles{{"/app", profile("/app", reads)}};
    placement::DirectorySource src(dir / "src");
    auto plan = placement::plan_placement(assign({{"/app", 0}}), profiles, {}, src);
    emit::materialize(plan, dir / "src", dir / "out", binaries());
    CHECK(walked_paths(dir / "out/containers/c0/rootfs") == expected);
  }

  TEST_CASE("compose descriptors") {
    emit::ContainerManifest one;
    one.name = "only";
    auto doc = nlohmann::json::parse(emit::emit_compose({one}));
    CHECK(doc["services"].size() == 1);
    CHECK_FALSE(doc["services"]["only"].contains("volumes"));

    Mediawiki mw;
    auto r = emit::materialize(mw.plan, mw.source, mw.dir / "out", binaries());
    auto compose = nlohmann::json::parse(fixtures::slurp(mw.dir / "out/docker-compose.json"));
    CHECK(compose["services"].size() == 4);
    std::string first;
    for (const auto& m : r.manifests) {
      auto s = compose["services"][m.name];
      for (const auto& v : m.volumes) {
        bool listed = false;
        for (const auto& entry : s["volumes"]) listed |= entry.get<std::string>() == "./" + v.host + ":" + v.mount;
        CHECK_MESSAGE(listed, m.name << " " << v.mount);
      }
      if (first.empty()) {
        first = m.name;
        CHECK_FALSE(s.contains("network_mode"));
      } else {
        CHECK(s["network_mode"] == "service:" + first);
      }
    }
    for (const auto& v : mw.plan.volumes) {
      int users = 0;
      for (const auto& [name, s] : compose["services"].items()) {
        for (const auto& entry : s.value("volumes", nlohmann::json::array())) {
          users += entry.get<std::string>().find(":" + v.mount) != std::string::npos;
        }
      }
      CHECK(users == static_cast<int>(v.containers.size()));
    }
  }

  TEST_CASE("size report") {
    fixtures::TempDir dir;
    fixtures::build_tree(dir / "src", "d 0755 /bin\nf 0755 1000 /bin/app\nf 0644 3000 /bin/data\n");
    placement::DirectorySource src(dir / "src");
    std::map<std::string, attribution::ExeProfile> profiles{
        {"/bin/app", profile("/bin/app", {Resource::file("/bin/app"), Resource::file("/bin/data")})}};
    auto plan = placement::plan_placement(assign({{"/bin/app", 0}}), profiles, {}, src);
    auto r = emit::materialize(plan, dir / "src", dir / "out", binaries());
    auto rep = emit::size_report(dir / "src", dir / "out", r.manifests);
    CHECK(rep.source_bytes == 4000);
    CHECK(rep.total_bytes == 4000);
    CHECK(rep.reduction == doctest::Approx(0.0));
    CHECK(emit::format_size_report(rep).find("0.0%") != std::string::npos);

    profiles["/bin/app"] = profile("/bin/app", {Resource::file("/bin/app")});
    plan = placement::plan_placement(assign({{"/bin/app", 0}}), profiles, {}, src);
    r = emit::materialize(plan, dir / "src", dir / "out2", binaries());
    rep = emit::size_report(dir / "src", dir / "out2", r.manifests);
    CHECK(rep.reduction == doctest::Approx(0.75));
  }
}
