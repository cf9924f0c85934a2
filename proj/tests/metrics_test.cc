// Copyright 2026 The Weavenet Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>
TEST(Placeholder, Pending) {}
