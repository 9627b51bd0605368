#include "cvr/errors.hpp"

namespace cvr {

const char* error_kind_name(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::usage: return "usage";
        case ErrorKind::dimension: return "dimension";
        case ErrorKind::geometry: return "geometry";
        case ErrorKind::precondition: return "precondition";
        case ErrorKind::numeric: return "numeric";
        case ErrorKind::state: return "state";
        case ErrorKind::parse: return "parse";
        case ErrorKind::config: return "config";
        case ErrorKind::index: return "index";
        case ErrorKind::io: return "io";
    }
    return "unknown";
}

}  // namespace cvr
