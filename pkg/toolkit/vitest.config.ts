import { defineConfig } from "vitest/config";

export default defineConfig({
  test: {
    testTimeout: 120_000,
    hookTimeout: 60_000,
    // tfjs keeps webgl shims alive; run in a single forked process
    pool: "forks",
    poolOptions: { forks: { singleFork: true } },
  },
});
