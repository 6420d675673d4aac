#include "ende/annotator.hpp"

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>

#include "ende/error.hpp"
#include "ende/serialize.hpp"

namespace ende {

ExternalAnnotator::ExternalAnnotator(const std::string& command) : command_(command) {
  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0 || pipe(out_pipe) != 0) {
    throw Error(std::string("cannot create annotator pipes: ") + std::strerror(errno));
  }
  pid_ = fork();
  if (pid_ < 0) throw Error(std::string("cannot start annotator: ") + std::strerror(errno));
  if (pid_ == 0) {
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    ::close(out_pipe[0]);
    ::close(out_pipe[1]);
    execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  signal(SIGPIPE, SIG_IGN);
}

ExternalAnnotator::~ExternalAnnotator() { close(); }

void ExternalAnnotator::close() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    int status = 0;
    waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

BoundaryAnnotation ExternalAnnotator::annotate(const Sentence& sentence) {
  if (to_child_ < 0) throw Error("annotator is closed");
  const std::string request = Json{{"id", sentence.id}, {"tokens", sentence.tokens}}.dump() + "\n";
  for (std::size_t sent = 0; sent < request.size();) {
    const ssize_t n = write(to_child_, request.data() + sent, request.size() - sent);
    if (n <= 0) {
      if (n < 0 && errno == EINTR) continue;
      throw Error("annotator '" + command_ + "' stopped accepting input");
    }
    sent += static_cast<std::size_t>(n);
  }
  std::size_t newline;
  while ((newline = buffer_.find('\n')) == std::string::npos) {
    char chunk[4096];
    const ssize_t n = read(from_child_, chunk, sizeof chunk);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw Error("annotator '" + command_ + "' exited before answering " + sentence.id);
    buffer_.append(chunk, static_cast<std::size_t>(n));
  }
  const std::string line = buffer_.substr(0, newline);
  buffer_.erase(0, newline + 1);
  try {
    const Json j = Json::parse(line);
    BoundaryAnnotation b;
    b.pos = j.at("pos").get<std::vector<std::string>>();
    b.tree = parse_bracketed_tree(j.at("constituency").get<std::string>(), sentence.tokens);
    validate_boundary(b, sentence.tokens);
    return b;
  } catch (const Json::exception& e) {
    throw DataError("annotator reply for " + sentence.id + " is malformed: " + e.what());
  } catch (const Error& e) {
    throw DataError("annotator reply for " + sentence.id + ": " + e.what());
  }
}

std::size_t annotate_missing(std::vector<AnnotatedExample>& examples, ExternalAnnotator& annotator) {
  std::size_t count = 0;
  for (auto& ex : examples) {
    if (ex.boundary) continue;
    ex.boundary = annotator.annotate(ex.sentence);
    ++count;
  }
  return count;
}

}  // namespace ende
