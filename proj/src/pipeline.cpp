#include "rlp/errors.hpp"
