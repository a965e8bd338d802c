pub mod soft_oracle;
