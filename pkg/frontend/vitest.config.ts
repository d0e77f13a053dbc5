import { defineConfig } from "vitest/config";

// The live-session suite spawns the python service and drives a full
// guided sweep over a real WebSocket, so the timeouts are generous.
export default defineConfig({
  test: {
    include: ["tests/**/*.test.ts"],
    environment: "node",
    testTimeout: 180_000,
    hookTimeout: 60_000,
  },
});
