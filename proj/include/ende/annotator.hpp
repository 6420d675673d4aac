#pragma once

#include <string>
#include <vector>

#include "ende/boundary.hpp"
#include "ende/corpus.hpp"

namespace ende {

// Long-running external POS tagger / parser speaking one JSON object per
// line on stdin and stdout:
//   in:  {"id": str, "tokens": [str]}
//   out: {"pos": [str], "constituency": str}
// The command runs under /bin/sh -c. POSIX only.
class ExternalAnnotator {
 public:
  explicit ExternalAnnotator(const std::string& command);
  ~ExternalAnnotator();
  ExternalAnnotator(const ExternalAnnotator&) = delete;
  ExternalAnnotator& operator=(const ExternalAnnotator&) = delete;

  // Validated against the sentence; throws DataError on a bad reply.
  BoundaryAnnotation annotate(const Sentence& sentence);

 private:
  void close();

  std::string command_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string buffer_;
};

// Annotates every example that lacks boundary features. Returns the count.
std::size_t annotate_missing(std::vector<AnnotatedExample>& examples, ExternalAnnotator& annotator);

}  // namespace ende
