# E2E tests for muscl
