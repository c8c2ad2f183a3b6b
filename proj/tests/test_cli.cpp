#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "doctest.h"

namespace fs = std::filesystem;

namespace {

struct Run {
  int status = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string strip_comments(const std::string& text) {
  std::string out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (!line.empty() && line[0] == '#') continue;
    out += line + "\n";
  }
  return out;
}

size_t count_lines(const std::string& text, bool skip_comments = false) {
  size_t n = 0;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    if (skip_comments && !line.empty() && line[0] == '#') continue;
    ++n;
  }
  return n;
}

// Scratch directory removed on scope exit; commands run inside it.
class Workdir {
 public:
  Workdir() {
    static int counter = 0;
    path_ = fs::temp_directory_path() /
            ("difflm-cli-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~Workdir() { fs::remove_all(path_); }
  Workdir(const Workdir&) = delete;
  Workdir& operator=(const Workdir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

  void write(const std::string& name, const std::string& text) const {
    std::ofstream(path_ / name, std::ios::binary) << text;
  }

  Run run(const std::string& args) const {
    const fs::path out = path_ / ".stdout";
    const fs::path err = path_ / ".stderr";
    const std::string cmd = "cd '" + path_.string() + "' && '" DIFFLM_CLI_PATH "' " + args + " >'" +
                            out.string() + "' 2>'" + err.string() + "'";
    const int raw = std::system(cmd.c_str());
    Run r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = slurp(out);
    r.err = slurp(err);
    return r;
  }

 private:
  fs::path path_;
};

const char* kSmallModel = "--dim 16 --ff-dim 32 --layers 1 --heads 2 --max-positions 32";

void make_corpus(const Workdir& dir) {
  const Run r = dir.run("synth --task copy --train-size 60 --test-size 6 --min-len 2 --max-len 5 "
                        "--vocab-size 6 --train-out train.tsv --test-out test.tsv");
  REQUIRE(r.status == 0);
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("schedule table has one row per timestep") {
    Workdir dir;
    for (const char* family : {"linear", "cosine"}) {
      const Run r = dir.run(std::string("inspect-schedule --steps 7 --length 5 --schedule ") + family);
      REQUIRE(r.status == 0);
      CHECK(count_lines(r.out, true) == 8);
      CHECK(r.out.find("# config inspect-schedule") == 0);
    }
  }

  TEST_CASE("missing inputs fail with the path named") {
    Workdir dir;
    const Run r = dir.run("adapt --train no-such-corpus.tsv --out m.ckpt");
    CHECK(r.status != 0);
    CHECK(r.err.find("no-such-corpus.tsv") != std::string::npos);
    CHECK(r.err.rfind("difflm: error: ", 0) == 0);
    CHECK(count_lines(r.err) == 1);
    CHECK_FALSE(fs::exists(dir / "m.ckpt"));
  }

  TEST_CASE("usage errors exit with status 2") {
    Workdir dir;
    CHECK(dir.run("").status == 2);
    CHECK(dir.run("adapt --out m.ckpt").status == 2);
    CHECK(dir.run("generate --checkpoint x --mode sideways").status != 0);
  }

  TEST_CASE("zero steps writes the initialization unchanged") {
    Workdir dir;
    make_corpus(dir);
    const std::string common = std::string("--train train.tsv ") + kSmallModel + " --seed 3";
    REQUIRE(dir.run("adapt " + common + " --steps 0 --out a.ckpt").status == 0);
    fs::create_directory(dir / "again");
    fs::rename(dir / "a.ckpt", dir / "again" / "a.ckpt");
    REQUIRE(dir.run("adapt " + common + " --steps 0 --out a.ckpt").status == 0);
    REQUIRE(dir.run("adapt --train train.tsv --init a.ckpt --steps 0 --out c.ckpt").status == 0);
    const std::string a = slurp(dir / "a.ckpt");
    CHECK(a == slurp(dir / "again" / "a.ckpt"));
    // Continuing from a checkpoint with no steps keeps the weights but
    // records the new run, so compare by decoding.
    for (const char* ck : {"a.ckpt", "c.ckpt"}) {
      const Run g = dir.run(std::string("generate --checkpoint ") + ck + " --prompts test.tsv --steps 4 --oracle-length --out " + ck + ".txt");
      REQUIRE(g.status == 0);
    }
    CHECK(strip_comments(slurp(dir / "a.ckpt.txt")) == strip_comments(slurp(dir / "c.ckpt.txt")));
  }

  TEST_CASE("identical runs are byte identical") {
    Workdir dir;
    make_corpus(dir);
    const std::string adapt = std::string("adapt --train train.tsv --heldout test.tsv ") + kSmallModel +
                              " --steps 20 --batch-size 8 --log-interval 5 --seed 11";
    // Output names are part of the recorded run configuration, so both runs
    // write the same names and the first result is moved aside.
    REQUIRE(dir.run(adapt + " --out m.ckpt --metrics m.log").status == 0);
    fs::rename(dir / "m.ckpt", dir / "a.ckpt");
    fs::rename(dir / "m.log", dir / "a.log");
    REQUIRE(dir.run(adapt + " --out m.ckpt --metrics m.log").status == 0);
    fs::rename(dir / "m.ckpt", dir / "b.ckpt");
    fs::rename(dir / "m.log", dir / "b.log");
    CHECK(slurp(dir / "a.ckpt") == slurp(dir / "b.ckpt"));
    CHECK(slurp(dir / "a.log") == slurp(dir / "b.log"));
    CHECK(count_lines(slurp(dir / "a.log"), true) == 4);
    for (const char* mode : {"topk", "ancestral"}) {
      const std::string gen = std::string("generate --checkpoint a.ckpt --prompts test.tsv --steps 6 "
                                          "--length-beams 2 --seed 5 --mode ") + mode;
      const Run x = dir.run(gen);
      const Run y = dir.run(gen + " --threads 3");
      REQUIRE(x.status == 0);
      CHECK(strip_comments(x.out) == strip_comments(y.out));
      CHECK(count_lines(x.out, true) == 6);
    }
  }

  TEST_CASE("a single denoising step still produces full responses") {
    Workdir dir;
    make_corpus(dir);
    REQUIRE(dir.run(std::string("adapt --train train.tsv --steps 2 --out m.ckpt ") + kSmallModel).status == 0);
    const Run r = dir.run("generate --checkpoint m.ckpt --prompts test.tsv --steps 1 --length 3");
    REQUIRE(r.status == 0);
    std::istringstream in(r.out);
    size_t rows = 0;
    for (std::string line; std::getline(in, line);) {
      if (line.rfind("#", 0) == 0) continue;
      CHECK(line.size() == 3);
      ++rows;
    }
    CHECK(rows == 6);
  }

  TEST_CASE("trace files hold one line per step plus the initial state") {
    Workdir dir;
    make_corpus(dir);
    REQUIRE(dir.run(std::string("adapt --train train.tsv --steps 2 --out m.ckpt ") + kSmallModel).status == 0);
    const Run r = dir.run("trace --checkpoint m.ckpt --prompts test.tsv --steps 9 --oracle-length --out-dir traces");
    REQUIRE(r.status == 0);
    const std::string first = slurp(dir / "traces" / "trace-0001.tsv");
    CHECK(count_lines(first) == 10);
    CHECK(fs::exists(dir / "traces" / "trace-0006.tsv"));
    CHECK(slurp(dir / "traces" / "config.txt").find("steps=9") != std::string::npos);
  }

  TEST_CASE("eval of references against themselves is perfect") {
    Workdir dir;
    make_corpus(dir);
    REQUIRE(dir.run("synth --task reverse --train-size 5 --test-size 0 --train-out refs.tsv").status == 0);
    std::istringstream in(slurp(dir / "refs.tsv"));
    std::string refs;
    for (std::string line; std::getline(in, line);) refs += line.substr(line.find('\t') + 1) + "\n";
    dir.write("refs.txt", refs);
    const Run r = dir.run("eval --hypotheses refs.txt --references refs.txt --report report.json");
    REQUIRE(r.status == 0);
    CHECK(r.out.find("exact_match=1.000000") != std::string::npos);
    CHECK(r.out.find("bleu=100.000000") != std::string::npos);
    CHECK(slurp(dir / "report.json").find("\"exact_match\": 1.0") != std::string::npos);
  }

  TEST_CASE("eval echoes its decoding configuration") {
    Workdir dir;
    make_corpus(dir);
    REQUIRE(dir.run(std::string("adapt --train train.tsv --steps 2 --out m.ckpt ") + kSmallModel).status == 0);
    const Run r = dir.run("eval --test test.tsv --checkpoint m.ckpt --steps 4 --length-beams 3 --mode ancestral "
                          "--predictions pred.txt");
    REQUIRE(r.status == 0);
    CHECK(r.out.find("length-beams=3") != std::string::npos);
    CHECK(r.out.find("mode=ancestral") != std::string::npos);
    CHECK(r.out.find("samples=6") != std::string::npos);
    CHECK(count_lines(slurp(dir / "pred.txt"), true) == 6);
  }

  TEST_CASE("config files supply defaults and flags override them") {
    Workdir dir;
    dir.write("sched.conf", "# schedule defaults\nsteps = 3\nschedule=cosine\n");
    Run r = dir.run("inspect-schedule --config sched.conf");
    REQUIRE(r.status == 0);
    CHECK(count_lines(r.out, true) == 4);
    CHECK(r.out.find("schedule=cosine") != std::string::npos);
    r = dir.run("inspect-schedule --config sched.conf --steps 5");
    REQUIRE(r.status == 0);
    CHECK(count_lines(r.out, true) == 6);
    dir.write("bad.conf", "steps=3\nbogus=1\n");
    r = dir.run("inspect-schedule --config bad.conf");
    CHECK(r.status != 0);
    CHECK(r.err.find("bad.conf line 2") != std::string::npos);
    CHECK(r.err.find("'bogus'") != std::string::npos);
  }
}
