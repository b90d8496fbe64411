#pragma once

// libtorch's glog shim defines CHECK; doctest's takes over in tests.
#ifdef CHECK
#undef CHECK
#endif
#include "doctest.h"
