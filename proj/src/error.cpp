#include "rdml/error.hpp"

namespace rdml {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "invalid argument";
        case ErrorKind::ShapeMismatch: return "shape mismatch";
        case ErrorKind::NumericFailure: return "numeric failure";
        case ErrorKind::Resample: return "resample";
        case ErrorKind::Io: return "io";
        case ErrorKind::Config: return "config";
    }
    return "unknown";
}

}  // namespace rdml
