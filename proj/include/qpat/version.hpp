#pragma once

#define QPAT_VERSION "0.1.0"
